//! Minimal reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] is built fresh for every forward pass. Leaves are created with
//! [`Tape::param`] (gradient tracked) or [`Tape::constant`]; ops return
//! [`Var`] handles, and [`Tape::backward`] fills gradients for every tracked
//! node reachable from a scalar loss.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{compare_gradients, finite_diff_check, mixed_error, GradCheckReport, ParamCheck};
pub use ops::{sigmoid_scalar, NORM_FLOOR};
pub use tape::{GradSink, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
