//! Central-difference verification of tape gradients.

use serde::Serialize;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Error metric used by the checker: the smaller of the absolute and the
/// relative discrepancy.
pub fn mixed_error(analytic: f64, numeric: f64) -> f64 {
    let abs = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        abs
    } else {
        abs.min(abs / scale)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_error: f64,
    pub eps: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Checks the tape gradient of `f` at `params` against central differences.
pub fn finite_diff_check<F>(f: F, params: &[(String, Tensor)], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|(_, t)| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();
    compare_gradients(
        |values| {
            let mut tape = Tape::new();
            let vars = values
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect::<Result<Vec<_>>>()?;
            let out = f(&mut tape, &vars)?;
            Ok(tape.value(out).item())
        },
        params,
        &analytic,
        eps,
        tol,
    )
}

/// Compares caller-supplied analytic gradients against central differences
/// of the scalar function `value`.
pub fn compare_gradients<F>(
    value: F,
    params: &[(String, Tensor)],
    analytic: &[Tensor],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut point: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut checks = Vec::with_capacity(params.len());
    for (p, (name, _)) in params.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            max_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..point[p].len() {
            let original = point[p].data()[i];
            point[p].data_mut()[i] = original + eps;
            let plus = value(&point)?;
            point[p].data_mut()[i] = original - eps;
            let minus = value(&point)?;
            point[p].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[i];
            let err = mixed_error(a, numeric);
            if err > check.max_error || i == 0 {
                check.max_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        checks.push(check);
    }
    let max_error = checks.iter().map(|c| c.max_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        max_error,
        eps,
        tol,
        passed: max_error <= tol,
    })
}
