//! Sparse fusion of concept activations across layers.
//!
//! Patch tokens are pooled into one vector per attribute, compared with that
//! attribute's concept embeddings and weighted by the layer's preference. A
//! softmax over layers gives each concept's layer weights; an adaptive
//! per-layer threshold then keeps only the strongest layer-concept weights,
//! and the survivors combine the scores into the `m * k` bottleneck.

use std::ops::Range;

use log::warn;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Largest magnitude allowed for the `tau2 * (|w| - theta)` exponent.
pub const EXPONENT_LIMIT: f64 = 30.0;

/// Contiguous patch segments, one per attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolingPlan {
    bounds: Vec<usize>,
}

impl PoolingPlan {
    /// Boundaries `b_i = round(i * n_patches / m)`, halves rounded to even.
    pub fn new(n_patches: usize, n_attributes: usize) -> Result<Self> {
        if n_attributes == 0 || n_patches < n_attributes {
            return Err(Error::TooFewPatches {
                patches: n_patches,
                attributes: n_attributes,
            });
        }
        let m = n_attributes;
        let bounds = (0..=m)
            .map(|i| {
                let (q, r) = ((i * n_patches) / m, (i * n_patches) % m);
                match (2 * r).cmp(&m) {
                    std::cmp::Ordering::Less => q,
                    std::cmp::Ordering::Greater => q + 1,
                    std::cmp::Ordering::Equal => q + (q % 2),
                }
            })
            .collect();
        Ok(PoolingPlan { bounds })
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn n_attributes(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn segment(&self, attribute: usize) -> Range<usize> {
        self.bounds[attribute]..self.bounds[attribute + 1]
    }
}

/// Mean patch token of every attribute segment: `[L, N_p, d]` (or `[N_p, d]`)
/// gives `[L, m, d]` (or `[m, d]`).
pub fn attribute_pool(tape: &mut Tape, patches: Var, plan: &PoolingPlan) -> Result<Var> {
    match tape.shape(patches).to_vec()[..] {
        [n, d] => {
            if n < plan.n_attributes() {
                return Err(Error::TooFewPatches {
                    patches: n,
                    attributes: plan.n_attributes(),
                });
            }
            let x = tape.reshape(patches, &[1, n, d])?;
            let pooled = tape.segment_mean(x, plan.bounds())?;
            tape.reshape(pooled, &[plan.n_attributes(), d])
        }
        [_, n, _] if n < plan.n_attributes() => Err(Error::TooFewPatches {
            patches: n,
            attributes: plan.n_attributes(),
        }),
        [_, _, _] => tape.segment_mean(patches, plan.bounds()),
        ref s => Err(Error::shape(
            "attribute_pool",
            format!("patch tokens must be 2-D or 3-D, got {s:?}"),
        )),
    }
}

/// `cos(pooled[l, i], concepts[i, j])` for `pooled: [L, m, d]`, `concepts: [m, k, d]`.
pub fn concept_cosines(tape: &mut Tape, pooled: Var, concepts: Var) -> Result<Var> {
    tape.cosine_grouped(pooled, concepts)
}

/// Preference-weighted activations `s[l, i, j] = p[l, i] * cos[l, i, j]`.
pub fn weight_scores(tape: &mut Tape, preference: Var, cosines: Var) -> Result<Var> {
    tape.mul_broadcast_last(preference, cosines)
}

/// Activation scores straight from pooled tokens and concept embeddings.
pub fn concept_scores(tape: &mut Tape, preference: Var, pooled: Var, concepts: Var) -> Result<Var> {
    let cos = concept_cosines(tape, pooled, concepts)?;
    weight_scores(tape, preference, cos)
}

/// Softmax over layers (axis 0), separately for every concept.
pub fn layer_softmax(tape: &mut Tape, scores: Var) -> Result<Var> {
    tape.softmax_axis(scores, 0)
}

fn layer_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let Some((&layers, rest)) = shape.split_first() else {
        return Err(Error::shape("threshold", "layer weights must have a layer axis"));
    };
    let cols: usize = rest.iter().product();
    if shape.len() == 2 {
        Ok(x)
    } else {
        tape.reshape(x, &[layers, cols])
    }
}

/// `theta[l] = sigmoid(K) * (max|w| - min|w|) + min|w|` over the concepts of
/// layer `l`, clamped into `[min|w|, max|w|]`. Returns `[L]`.
pub fn adaptive_threshold(tape: &mut Tape, weights: Var, k: Var) -> Result<Var> {
    let rows = layer_rows(tape, weights)?;
    let magnitude = tape.abs(rows)?;
    let hi = tape.max_rows(magnitude)?;
    let lo = tape.min_rows(magnitude)?;
    let range = tape.sub(hi, lo)?;
    let gate = tape.sigmoid(k)?;
    let scaled = tape.mul_scalar(range, gate)?;
    let theta = tape.add(scaled, lo)?;
    tape.clamp_between(theta, lo, hi)
}

/// `|w| - theta[l]` laid out as `[L, m*k]`.
pub fn threshold_gap(tape: &mut Tape, weights: Var, thresholds: Var) -> Result<Var> {
    let rows = layer_rows(tape, weights)?;
    let magnitude = tape.abs(rows)?;
    tape.sub_rows(magnitude, thresholds)
}

/// `exp(tau2 * (|w| - theta)) * w`, with the exponent clamped to
/// `+-EXPONENT_LIMIT`. Returns the adjusted weights (`[L, m*k]`) and how many
/// entries hit the clamp.
pub fn adjust_weights(tape: &mut Tape, weights: Var, thresholds: Var, tau2: Var) -> Result<(Var, usize)> {
    let gap = threshold_gap(tape, weights, thresholds)?;
    adjust_from_gap(tape, weights, gap, tau2)
}

pub(crate) fn adjust_from_gap(tape: &mut Tape, weights: Var, gap: Var, tau2: Var) -> Result<(Var, usize)> {
    let exponent = tape.mul_scalar(gap, tau2)?;
    let clamped = tape
        .value(exponent)
        .data()
        .iter()
        .filter(|v| v.abs() > EXPONENT_LIMIT)
        .count();
    if clamped > 0 {
        warn!("adjustment exponent clamped to +-{EXPONENT_LIMIT} for {clamped} entries");
    }
    let exponent = tape.clamp(exponent, -EXPONENT_LIMIT, EXPONENT_LIMIT)?;
    let factor = tape.exp(exponent)?;
    let rows = layer_rows(tape, weights)?;
    Ok((tape.mul(factor, rows)?, clamped))
}

/// Binary mask `|w[l, ..]| >= theta[l]`, shaped like `weights`.
pub fn hard_mask(weights: &Tensor, thresholds: &Tensor) -> Tensor {
    let layers = thresholds.len();
    let cols = weights.len() / layers.max(1);
    let data = weights
        .data()
        .iter()
        .enumerate()
        .map(|(i, w)| f64::from(u8::from(w.abs() >= thresholds.data()[i / cols])))
        .collect();
    Tensor::new(weights.shape().to_vec(), data).expect("mask has the weight shape")
}

/// Smooth stand-in for the hard mask: `sigmoid(beta * (|w| - theta))`.
pub fn soft_mask(tape: &mut Tape, gap: Var, beta: f64) -> Result<Var> {
    let sharp = tape.scale(gap, beta)?;
    tape.sigmoid(sharp)
}

/// Mask-weighted fusion. `mask`, `adjusted` are `[L, m*k]`, `scores` is
/// `[L, m, k]` (or already `[L, m*k]`). Returns the sparse weights and the
/// aggregated bottleneck `[m*k]`.
pub fn sparse_aggregate(tape: &mut Tape, mask: Var, adjusted: Var, scores: Var) -> Result<(Var, Var)> {
    let sparse = tape.mul(mask, adjusted)?;
    let rows = layer_rows(tape, scores)?;
    let weighted = tape.mul(sparse, rows)?;
    Ok((sparse, tape.sum_axis0(weighted)?))
}

/// Fraction of active entries, averaged per layer then over layers.
pub fn sparsity_fraction(mask: &Tensor) -> f64 {
    let layers = mask.shape().first().copied().unwrap_or(1).max(1);
    let cols = mask.len() / layers;
    if cols == 0 {
        return 0.0;
    }
    mask.data()
        .chunks(cols)
        .map(|row| row.iter().sum::<f64>() / cols as f64)
        .sum::<f64>()
        / layers as f64
}

/// How the layer-concept weights are gated before aggregation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskMode {
    Hard,
    Soft { beta: f64 },
}

/// Handles to every intermediate of one fused forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    /// `[L, m, k]`
    pub scores: Var,
    /// `[L, m, k]`
    pub weights: Var,
    /// `[L]`
    pub thresholds: Var,
    /// `[L, m*k]`, `|w| - theta`
    pub gap: Var,
    /// `[L, m*k]`
    pub mask: Var,
    /// `[L, m*k]`
    pub adjusted: Var,
    /// `[L, m*k]`
    pub sparse: Var,
    /// `[m*k]`
    pub aggregated: Var,
    pub clamp_events: usize,
}

/// Scores through to the bottleneck. `preference: [L, m]`, `cosines: [L, m, k]`.
pub fn fuse(
    tape: &mut Tape,
    preference: Var,
    cosines: Var,
    k: Var,
    tau2: Var,
    mask_mode: MaskMode,
) -> Result<FusionVars> {
    let scores = weight_scores(tape, preference, cosines)?;
    let weights = layer_softmax(tape, scores)?;
    let thresholds = adaptive_threshold(tape, weights, k)?;
    let gap = threshold_gap(tape, weights, thresholds)?;
    let (adjusted, clamp_events) = adjust_from_gap(tape, weights, gap, tau2)?;
    let mask = match mask_mode {
        MaskMode::Hard => {
            let rows = layer_rows(tape, weights)?;
            let m = hard_mask(tape.value(rows), tape.value(thresholds));
            tape.constant(m)?
        }
        MaskMode::Soft { beta } => soft_mask(tape, gap, beta)?,
    };
    let (sparse, aggregated) = sparse_aggregate(tape, mask, adjusted, scores)?;
    Ok(FusionVars {
        scores,
        weights,
        thresholds,
        gap,
        mask,
        adjusted,
        sparse,
        aggregated,
        clamp_events,
    })
}

/// Plain-value snapshot of one sample's fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationState {
    /// `[L, m]`
    pub preference: Tensor,
    /// `[L, m, k]`
    pub scores: Tensor,
    /// `[L, m, k]`
    pub layer_weights: Tensor,
    /// `[L]`
    pub thresholds: Tensor,
    /// `[L, m, k]`
    pub mask: Tensor,
    /// `[L, m, k]`
    pub adjusted: Tensor,
    /// `[L, m, k]`
    pub sparse_weights: Tensor,
    /// `[m, k]`
    pub aggregated: Tensor,
}

impl ActivationState {
    pub fn capture(tape: &Tape, preference: Var, fusion: &FusionVars) -> Self {
        let scores = tape.value(fusion.scores).clone();
        let shape = scores.shape().to_vec();
        let as_scores = |v: Var| {
            tape.value(v)
                .clone()
                .reshaped(&shape)
                .expect("fusion tensors share the score layout")
        };
        ActivationState {
            preference: tape.value(preference).clone(),
            layer_weights: as_scores(fusion.weights),
            thresholds: tape.value(fusion.thresholds).clone(),
            mask: as_scores(fusion.mask),
            adjusted: as_scores(fusion.adjusted),
            sparse_weights: as_scores(fusion.sparse),
            aggregated: tape
                .value(fusion.aggregated)
                .clone()
                .reshaped(&shape[1..])
                .expect("bottleneck is m*k"),
            scores,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.scores.shape()[0]
    }

    /// `w_sparse * s`, the per-layer contributions to the bottleneck.
    pub fn sparse_activation(&self) -> Tensor {
        let data = self
            .sparse_weights
            .data()
            .iter()
            .zip(self.scores.data())
            .map(|(w, s)| w * s)
            .collect();
        Tensor::new(self.scores.shape().to_vec(), data).expect("same layout")
    }

    pub fn sparsity_fraction(&self) -> f64 {
        sparsity_fraction(&self.mask)
    }
}
