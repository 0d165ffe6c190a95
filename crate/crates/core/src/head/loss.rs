use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::mcsaf::{soft_mask, threshold_gap};

/// Linear classifier over the flattened bottleneck (attribute-major).
pub fn classify(tape: &mut Tape, bottleneck: Var, w: Var, b: Var) -> Result<Var> {
    tape.affine(w, bottleneck, b)
}

/// Mean over attributes of the k-way cross-entropy of the attribute's
/// bottleneck entries against its true concept.
pub fn concept_loss(tape: &mut Tape, bottleneck: Var, labels: &[usize], n_concepts: usize) -> Result<Var> {
    let rows = tape.reshape(bottleneck, &[labels.len(), n_concepts])?;
    let per_attribute = tape.cross_entropy_rows(rows, labels)?;
    tape.mean(per_attribute)
}

/// Mean of `sigmoid(beta * (|w| - theta))`: a smooth count of active
/// layer-concept weights.
pub fn sparse_loss_surrogate(tape: &mut Tape, weights: Var, thresholds: Var, beta: f64) -> Result<Var> {
    let gap = threshold_gap(tape, weights, thresholds)?;
    surrogate_from_gap(tape, gap, beta)
}

pub(crate) fn surrogate_from_gap(tape: &mut Tape, gap: Var, beta: f64) -> Result<Var> {
    let soft = soft_mask(tape, gap, beta)?;
    tape.mean(soft)
}

/// `ce + lambda1 * concept + lambda2 * surrogate`.
pub fn total_loss(
    tape: &mut Tape,
    ce: Var,
    concept: Var,
    surrogate: Option<Var>,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    let concept = tape.scale(concept, lambda1)?;
    let mut total = tape.add(ce, concept)?;
    if let Some(s) = surrogate {
        let s = tape.scale(s, lambda2)?;
        total = tape.add(total, s)?;
    }
    Ok(total)
}
