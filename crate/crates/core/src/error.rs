use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm below 1e-12 in {op}")]
    ZeroNorm { op: &'static str },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("{patches} patch tokens cannot be split into {attributes} attribute segments")]
    TooFewPatches { patches: usize, attributes: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("bad magic bytes, not an MVPB file")]
    BadMagic,

    #[error("unsupported MVPB version {0}")]
    UnsupportedVersion(u32),

    #[error("header/payload mismatch: {0}")]
    HeaderPayloadMismatch(String),

    #[error("non-finite value in section {section} at element {index}")]
    NonFiniteValue { section: &'static str, index: usize },

    #[error("bundle failed validation: {}", .0.join("; "))]
    ValidationFailed(Vec<String>),

    #[error("checkpoint fingerprint {checkpoint} does not match bundle fingerprint {bundle}")]
    FingerprintMismatch { checkpoint: String, bundle: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sample index {index} out of range for {len} samples")]
    SampleOutOfRange { index: usize, len: usize },

    #[error("loss became non-finite at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by arithmetic blowing up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NonFiniteLoss { .. })
    }
}
