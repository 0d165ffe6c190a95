//! Multi-layer concept bottleneck head: per-layer attribute preference,
//! sparse cross-layer fusion of concept activations and a linear classifier
//! over the fused concept scores, trained on precomputed encoder features.

pub mod autodiff;
pub mod bundle;
pub mod cli;
pub mod error;
pub mod eval;
pub mod explain;
pub mod head;
pub mod icpm;
pub mod mcsaf;
pub mod rng;

pub use error::{Error, Result};
