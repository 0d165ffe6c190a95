use rayon::prelude::*;

use super::config::{Mode, TrainConfig};
use super::loss::{classify, concept_loss, surrogate_from_gap, total_loss};
use super::params::HeadParams;
use crate::autodiff::{Tape, Tensor, Var};
use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};
use crate::icpm::{class_attribute_cosines, preference_from_cosines};
use crate::mcsaf::{
    attribute_pool, concept_cosines, fuse, hard_mask, sparsity_fraction, ActivationState, FusionVars, PoolingPlan,
};

/// Feature-dependent inputs of the head for one sample. Features are frozen,
/// so these cosines are computed once per sample and reused every epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    /// `[L, m]`, class token against attribute embeddings.
    pub class_cosines: Tensor,
    /// `[L, m, k]`, pooled attribute segment against concept embeddings.
    pub concept_cosines: Tensor,
}

/// Cosines from token handles, so the same code serves cached constants and
/// gradient checks through the features. `cls: [L, d]`,
/// `patches: [L, N_p, d]`, `attributes: [m, d]`, `concepts: [m, k, d]`.
pub fn encode_tokens(
    tape: &mut Tape,
    cls: Var,
    patches: Var,
    attributes: Var,
    concepts: Var,
    plan: &PoolingPlan,
) -> Result<(Var, Var)> {
    let class_cos = class_attribute_cosines(tape, cls, attributes)?;
    let pooled = attribute_pool(tape, patches, plan)?;
    let concept_cos = concept_cosines(tape, pooled, concepts)?;
    Ok((class_cos, concept_cos))
}

/// Turns bundle samples into [`EncodedSample`]s.
pub struct Encoder {
    attributes: Tensor,
    concepts: Tensor,
    plan: PoolingPlan,
}

impl Encoder {
    pub fn new(bundle: &FeatureBundle) -> Result<Self> {
        let (m, k, d) = (bundle.n_attributes(), bundle.n_concepts(), bundle.embed_dim);
        Ok(Encoder {
            attributes: Tensor::from_f32(&[m, d], &bundle.attribute_embeddings)?,
            concepts: Tensor::from_f32(&[m, k, d], &bundle.concept_embeddings)?,
            plan: PoolingPlan::new(bundle.n_patches, m)?,
        })
    }

    pub fn plan(&self) -> &PoolingPlan {
        &self.plan
    }

    pub fn encode(&self, bundle: &FeatureBundle, sample: usize) -> Result<EncodedSample> {
        let (layers, d, patches) = (bundle.n_layers, bundle.embed_dim, bundle.n_patches);
        let tokens = Tensor::from_f32(&[layers, patches + 1, d], bundle.sample_features(sample))?;
        let mut cls = Vec::with_capacity(layers * d);
        let mut patch = Vec::with_capacity(layers * patches * d);
        for layer in tokens.data().chunks(tokens.len() / layers) {
            cls.extend_from_slice(&layer[..d]);
            patch.extend_from_slice(&layer[d..]);
        }
        let mut tape = Tape::new();
        let cls = tape.constant(Tensor::new(vec![layers, d], cls)?)?;
        let patch = tape.constant(Tensor::new(vec![layers, patches, d], patch)?)?;
        let attributes = tape.constant(self.attributes.clone())?;
        let concepts = tape.constant(self.concepts.clone())?;
        let (a, c) = encode_tokens(&mut tape, cls, patch, attributes, concepts, &self.plan)?;
        Ok(EncodedSample {
            class_cosines: tape.value(a).clone(),
            concept_cosines: tape.value(c).clone(),
        })
    }

    pub fn encode_all(&self, bundle: &FeatureBundle) -> Result<Vec<EncodedSample>> {
        (0..bundle.n_samples())
            .into_par_iter()
            .map(|s| self.encode(bundle, s))
            .collect()
    }
}

/// Encodes every sample of `bundle`.
pub fn encode_samples(bundle: &FeatureBundle) -> Result<Vec<EncodedSample>> {
    Encoder::new(bundle)?.encode_all(bundle)
}

/// Tape handles for the head parameters.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub log_tau1: Var,
    pub tau2: Var,
    pub k: Var,
    pub w: Var,
    pub b: Var,
}

impl ParamVars {
    /// Registers `params`; `trainable[i]` decides gradient tracking for
    /// parameter `i` in [`super::PARAM_NAMES`] order.
    pub fn register(tape: &mut Tape, params: &HeadParams, trainable: [bool; 5]) -> Result<Self> {
        let [t0, t1, t2, t3, t4] = params.tensors();
        Ok(ParamVars {
            log_tau1: tape.leaf(t0, trainable[0])?,
            tau2: tape.leaf(t1, trainable[1])?,
            k: tape.leaf(t2, trainable[2])?,
            w: tape.leaf(t3, trainable[3])?,
            b: tape.leaf(t4, trainable[4])?,
        })
    }

    pub fn vars(&self) -> [Var; 5] {
        [self.log_tau1, self.tau2, self.k, self.w, self.b]
    }
}

/// Which parameters receive gradient under `cfg`.
pub fn trainable(cfg: &TrainConfig) -> [bool; 5] {
    match cfg.mode {
        Mode::BaselineLastLayer => [false, false, false, true, true],
        Mode::Full => [!cfg.fixed_tau1, !cfg.fixed_tau2, true, true, true],
    }
}

/// Handles produced by one forward pass of the head.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    /// `[L, m]`; absent in baseline mode.
    pub preference: Option<Var>,
    pub fusion: Option<FusionVars>,
    /// `[m*k]`
    pub bottleneck: Var,
    /// `[C]`
    pub logits: Var,
}

/// Logits of the last-layer baseline: plain concept cosines of the last
/// layer, scaled by the uniform attribute share `1/m`, into the classifier.
pub fn baseline_forward(tape: &mut Tape, params: &ParamVars, concept_cosines: Var) -> Result<(Var, Var)> {
    let shape = tape.shape(concept_cosines).to_vec();
    let [layers, m, k] = shape[..] else {
        return Err(Error::shape(
            "baseline",
            format!("concept cosines must be [L, m, k], got {shape:?}"),
        ));
    };
    let last = tape.slice_axis0(concept_cosines, layers - 1)?;
    let share = tape.constant(Tensor::vector(vec![1.0 / m as f64; m]))?;
    let weighted = tape.mul_broadcast_last(share, last)?;
    let bottleneck = tape.reshape(weighted, &[m * k])?;
    let logits = classify(tape, bottleneck, params.w, params.b)?;
    Ok((bottleneck, logits))
}

/// Head forward pass from the encoded cosines of one sample.
pub fn head_forward(
    tape: &mut Tape,
    params: &ParamVars,
    class_cosines: Var,
    concept_cosines: Var,
    cfg: &TrainConfig,
) -> Result<HeadVars> {
    if cfg.mode == Mode::BaselineLastLayer {
        let (bottleneck, logits) = baseline_forward(tape, params, concept_cosines)?;
        return Ok(HeadVars {
            preference: None,
            fusion: None,
            bottleneck,
            logits,
        });
    }
    let tau1 = tape.exp(params.log_tau1)?;
    let preference = preference_from_cosines(tape, class_cosines, tau1, cfg.preference_mode())?;
    let fusion = fuse(
        tape,
        preference,
        concept_cosines,
        params.k,
        params.tau2,
        cfg.mask_mode(),
    )?;
    let logits = classify(tape, fusion.aggregated, params.w, params.b)?;
    Ok(HeadVars {
        preference: Some(preference),
        fusion: Some(fusion),
        bottleneck: fusion.aggregated,
        logits,
    })
}

/// Loss handles for one sample.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub ce: Var,
    pub concept: Var,
    /// Absent in baseline mode, which has no layer weights.
    pub surrogate: Option<Var>,
    pub total: Var,
}

pub fn attach_loss(
    tape: &mut Tape,
    head: &HeadVars,
    label: usize,
    concept_labels: &[usize],
    n_concepts: usize,
    cfg: &TrainConfig,
) -> Result<LossVars> {
    let ce = tape.cross_entropy(head.logits, label)?;
    let concept = concept_loss(tape, head.bottleneck, concept_labels, n_concepts)?;
    let surrogate = match head.fusion {
        Some(f) => Some(surrogate_from_gap(tape, f.gap, cfg.surrogate_beta)?),
        None => None,
    };
    let total = total_loss(
        tape,
        ce,
        concept,
        surrogate,
        cfg.effective_lambda1(),
        cfg.effective_lambda2(),
    )?;
    Ok(LossVars {
        ce,
        concept,
        surrogate,
        total,
    })
}

/// Fraction of layer-concept weights passing the hard threshold (1.0 when
/// there is no fusion).
pub fn hard_sparsity(tape: &Tape, head: &HeadVars) -> f64 {
    match head.fusion {
        Some(f) => {
            let w = tape.value(f.gap);
            let active = w.data().iter().filter(|&&g| g >= 0.0).count();
            active as f64 / w.len() as f64
        }
        None => 1.0,
    }
}

/// Plain-value result of running the head on one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub logits: Vec<f64>,
    /// `[m*k]`
    pub bottleneck: Vec<f64>,
    /// Absent in baseline mode.
    pub state: Option<ActivationState>,
}

impl Inference {
    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }

    pub fn hard_sparsity(&self) -> f64 {
        self.state
            .as_ref()
            .map_or(1.0, |s| sparsity_fraction(&hard_mask(&s.layer_weights, &s.thresholds)))
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the head on one encoded sample without tracking gradients.
pub fn infer(params: &HeadParams, cfg: &TrainConfig, sample: &EncodedSample) -> Result<Inference> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params, [false; 5])?;
    let a = tape.constant(sample.class_cosines.clone())?;
    let c = tape.constant(sample.concept_cosines.clone())?;
    let head = head_forward(&mut tape, &pv, a, c, cfg)?;
    let state = match (head.preference, head.fusion) {
        (Some(p), Some(f)) => Some(ActivationState::capture(&tape, p, &f)),
        _ => None,
    };
    Ok(Inference {
        logits: tape.value(head.logits).data().to_vec(),
        bottleneck: tape.value(head.bottleneck).data().to_vec(),
        state,
    })
}
