use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::params::HeadParams;
use crate::autodiff::Tensor;
use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};

/// On-disk form of a trained head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tau1: f64,
    /// Stored alongside `tau1` so reloading is bit-exact.
    pub log_tau1: f64,
    pub tau2: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub n_classes: usize,
    pub n_bottleneck: usize,
    /// Row-major `[n_classes, n_bottleneck]`.
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub config: TrainConfig,
    pub bundle_fingerprint: String,
}

impl Checkpoint {
    pub fn new(params: &HeadParams, config: &TrainConfig, bundle: &FeatureBundle) -> Self {
        Checkpoint {
            tau1: params.tau1(),
            log_tau1: params.log_tau1,
            tau2: params.tau2,
            k: params.k,
            n_classes: params.n_classes(),
            n_bottleneck: params.n_bottleneck(),
            w: params.w.data().to_vec(),
            b: params.b.data().to_vec(),
            config: config.clone(),
            bundle_fingerprint: bundle.fingerprint(),
        }
    }

    pub fn params(&self) -> Result<HeadParams> {
        let shape_err = |what: &str, found: usize, expected: usize| {
            Error::DimensionMismatch(format!("checkpoint {what} has {found} values, expected {expected}"))
        };
        if self.w.len() != self.n_classes * self.n_bottleneck {
            return Err(shape_err("W", self.w.len(), self.n_classes * self.n_bottleneck));
        }
        if self.b.len() != self.n_classes {
            return Err(shape_err("b", self.b.len(), self.n_classes));
        }
        let params = HeadParams {
            log_tau1: self.log_tau1,
            tau2: self.tau2,
            k: self.k,
            w: Tensor::new(vec![self.n_classes, self.n_bottleneck], self.w.clone())?,
            b: Tensor::new(vec![self.n_classes], self.b.clone())?,
        };
        if !params.all_finite() {
            return Err(Error::NonFiniteValue {
                section: "checkpoint",
                index: 0,
            });
        }
        Ok(params)
    }

    /// Refuses bundles whose dimensions or schema differ from training.
    pub fn check_bundle(&self, bundle: &FeatureBundle) -> Result<()> {
        let fingerprint = bundle.fingerprint();
        if fingerprint != self.bundle_fingerprint {
            return Err(Error::FingerprintMismatch {
                checkpoint: self.bundle_fingerprint.clone(),
                bundle: fingerprint,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
