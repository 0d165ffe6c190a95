use crate::autodiff::Tensor;

/// Initial value of both temperatures.
pub const INITIAL_TAU: f64 = 0.2;

/// Names of the trainable tensors, in [`HeadParams::tensors`] order.
pub const PARAM_NAMES: [&str; 5] = ["log_tau1", "tau2", "K", "W", "b"];

/// Trainable state of the head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `tau1 = exp(log_tau1)` keeps the preference temperature positive.
    pub log_tau1: f64,
    /// Unconstrained; may change sign during training.
    pub tau2: f64,
    /// Threshold gate: `theta` sits at `sigmoid(K)` of each layer's weight range.
    pub k: f64,
    /// `[C, m*k]`
    pub w: Tensor,
    /// `[C]`
    pub b: Tensor,
}

impl HeadParams {
    pub fn init(n_classes: usize, n_bottleneck: usize) -> Self {
        HeadParams {
            log_tau1: INITIAL_TAU.ln(),
            tau2: INITIAL_TAU,
            k: 0.0,
            w: Tensor::zeros(&[n_classes, n_bottleneck]),
            b: Tensor::zeros(&[n_classes]),
        }
    }

    pub fn tau1(&self) -> f64 {
        self.log_tau1.exp()
    }

    pub fn n_classes(&self) -> usize {
        self.b.len()
    }

    pub fn n_bottleneck(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn tensors(&self) -> [Tensor; 5] {
        [
            Tensor::scalar(self.log_tau1),
            Tensor::scalar(self.tau2),
            Tensor::scalar(self.k),
            self.w.clone(),
            self.b.clone(),
        ]
    }

    /// Inverse of [`HeadParams::tensors`].
    pub fn from_tensors(t: &[Tensor]) -> Self {
        HeadParams {
            log_tau1: t[0].item(),
            tau2: t[1].item(),
            k: t[2].item(),
            w: t[3].clone(),
            b: t[4].clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        [self.log_tau1, self.tau2, self.k].iter().all(|v| v.is_finite()) && self.w.all_finite() && self.b.all_finite()
    }
}
