//! Per-layer attribute preference.
//!
//! Each layer's class token is compared against every attribute embedding;
//! the sigmoid of that cosine is the raw preference, and a temperature softmax
//! over attributes (within the layer) turns it into `p[l, i]`.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// How `p[l, i]` is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PreferenceMode {
    #[default]
    Learned,
    /// Every entry is `1/m`, detached from the gradient.
    Uniform,
}

/// Cosine between every layer's class token and every attribute embedding.
/// `cls: [L, d]`, `attributes: [m, d]` gives `[L, m]`.
pub fn class_attribute_cosines(tape: &mut Tape, cls: Var, attributes: Var) -> Result<Var> {
    let (layers, d) = match tape.shape(cls) {
        [l, d] => (*l, *d),
        s => {
            return Err(Error::shape(
                "preference",
                format!("class tokens must be [L, d], got {s:?}"),
            ))
        }
    };
    let m = match tape.shape(attributes) {
        [m, d2] if *d2 == d => *m,
        s => return Err(Error::shape("preference", format!("attributes {s:?} vs token dim {d}"))),
    };
    let a = tape.reshape(cls, &[layers, 1, d])?;
    let b = tape.reshape(attributes, &[1, m, d])?;
    let cos = tape.cosine_grouped(a, b)?;
    tape.reshape(cos, &[layers, m])
}

/// `sigmoid(cos(cls, T_i))` for one class token `[d]` against `[m, d]`.
pub fn raw_preference(tape: &mut Tape, cls: Var, attributes: Var) -> Result<Var> {
    let d = tape.shape(cls).iter().product();
    let cls = tape.reshape(cls, &[1, d])?;
    let cos = class_attribute_cosines(tape, cls, attributes)?;
    let m = tape.shape(cos)[1];
    let raw = tape.sigmoid(cos)?;
    tape.reshape(raw, &[m])
}

/// Temperature softmax over the last (attribute) axis.
pub fn normalize_preference(tape: &mut Tape, raw: Var, tau1: Var) -> Result<Var> {
    tape.softmax_temp(raw, tau1)
}

/// `[L, m]` preference from per-layer cosines already computed.
pub fn preference_from_cosines(tape: &mut Tape, cosines: Var, tau1: Var, mode: PreferenceMode) -> Result<Var> {
    match mode {
        PreferenceMode::Learned => {
            let raw = tape.sigmoid(cosines)?;
            normalize_preference(tape, raw, tau1)
        }
        PreferenceMode::Uniform => {
            let shape = tape.shape(cosines).to_vec();
            let m = *shape.last().unwrap_or(&1);
            tape.constant(Tensor::filled(&shape, 1.0 / m as f64))
        }
    }
}

/// `[L, m]` preference matrix from class tokens `[L, d]` and attribute
/// embeddings `[m, d]`.
pub fn preference_matrix(tape: &mut Tape, cls: Var, attributes: Var, tau1: Var, mode: PreferenceMode) -> Result<Var> {
    let cos = class_attribute_cosines(tape, cls, attributes)?;
    preference_from_cosines(tape, cos, tau1, mode)
}

/// A computed preference matrix with the temperature that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceMatrix {
    /// `[L, m]`
    pub values: Tensor,
    pub tau1: f64,
}

impl PreferenceMatrix {
    pub fn n_layers(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_attributes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, layer: usize) -> &[f64] {
        let m = self.n_attributes();
        &self.values.data()[layer * m..(layer + 1) * m]
    }
}
