use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icpm::PreferenceMode;
use crate::mcsaf::MaskMode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Preference-weighted sparse fusion over every layer.
    #[default]
    Full,
    /// Plain concept cosines of the last layer into the classifier.
    BaselineLastLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub uniform_preference: bool,
    pub no_concept_loss: bool,
    pub no_sparse_loss: bool,
    pub soft_mask: bool,
    pub fixed_tau1: bool,
    pub fixed_tau2: bool,
    /// Sharpness of the sigmoid that stands in for the hard mask in the
    /// sparsity loss (and in the soft-mask ablation).
    pub surrogate_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 0.01,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            mode: Mode::Full,
            uniform_preference: false,
            no_concept_loss: false,
            no_sparse_loss: false,
            soft_mask: false,
            fixed_tau1: false,
            fixed_tau2: false,
            surrogate_beta: 50.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigInvalid(msg));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("weight_decay", self.weight_decay),
        ] {
            if !finite_nonneg(v) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.surrogate_beta.is_finite() && self.surrogate_beta > 0.0) {
            return fail(format!("surrogate_beta must be > 0, got {}", self.surrogate_beta));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn effective_lambda1(&self) -> f64 {
        if self.no_concept_loss {
            0.0
        } else {
            self.lambda1
        }
    }

    pub fn effective_lambda2(&self) -> f64 {
        if self.no_sparse_loss {
            0.0
        } else {
            self.lambda2
        }
    }

    pub fn preference_mode(&self) -> PreferenceMode {
        if self.uniform_preference {
            PreferenceMode::Uniform
        } else {
            PreferenceMode::Learned
        }
    }

    pub fn mask_mode(&self) -> MaskMode {
        if self.soft_mask {
            MaskMode::Soft {
                beta: self.surrogate_beta,
            }
        } else {
            MaskMode::Hard
        }
    }
}
