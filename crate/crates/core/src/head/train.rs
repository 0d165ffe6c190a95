use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::forward::{
    argmax, attach_loss, encode_samples, hard_sparsity, head_forward, trainable, EncodedSample, ParamVars,
};
use super::optim::{AdamW, Slot};
use super::params::HeadParams;
use crate::autodiff::{Tape, Tensor};
use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};
use crate::eval::EvalResult;
use crate::rng;

/// Encoded samples plus their targets.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub samples: Vec<EncodedSample>,
    pub labels: Vec<usize>,
    /// `[n, m]`
    pub concept_labels: Vec<usize>,
    pub n_classes: usize,
    pub n_attributes: usize,
    pub n_concepts: usize,
}

impl TrainingSet {
    pub fn from_bundle(bundle: &FeatureBundle) -> Result<Self> {
        Ok(TrainingSet {
            samples: encode_samples(bundle)?,
            labels: bundle.labels.iter().map(|&l| l as usize).collect(),
            concept_labels: bundle.concept_labels.iter().map(|&l| l as usize).collect(),
            n_classes: bundle.n_classes(),
            n_attributes: bundle.n_attributes(),
            n_concepts: bundle.n_concepts(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_concept_labels(&self, sample: usize) -> &[usize] {
        let m = self.n_attributes;
        &self.concept_labels[sample * m..(sample + 1) * m]
    }

    pub fn subset(&self, indices: &[usize]) -> TrainingSet {
        TrainingSet {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            concept_labels: indices
                .iter()
                .flat_map(|&i| self.sample_concept_labels(i).to_vec())
                .collect(),
            ..self.clone_empty()
        }
    }

    fn clone_empty(&self) -> TrainingSet {
        TrainingSet {
            samples: Vec::new(),
            labels: Vec::new(),
            concept_labels: Vec::new(),
            n_classes: self.n_classes,
            n_attributes: self.n_attributes,
            n_concepts: self.n_concepts,
        }
    }
}

/// Running averages over one epoch, accumulated while the parameters move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mode: Mode,
    pub total_loss: f64,
    pub ce_loss: f64,
    pub concept_loss: f64,
    /// Fraction of layer-concept weights passing the hard threshold.
    pub hard_sparsity: f64,
    /// Smooth sparsity value used in the loss.
    pub surrogate_sparsity: f64,
    pub train_acc: f64,
    pub train_bmac: f64,
    pub clamp_events: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub epochs: Vec<EpochReport>,
}

/// Value and gradient of the loss of one sample.
#[derive(Clone, Debug)]
pub struct SamplePass {
    pub grads: [Tensor; 5],
    pub total: f64,
    pub ce: f64,
    pub concept: f64,
    pub surrogate: f64,
    pub hard_sparsity: f64,
    pub predicted: usize,
    pub clamp_events: usize,
}

/// Forward and backward through the head for sample `index` of `data`.
pub fn sample_pass(params: &HeadParams, cfg: &TrainConfig, data: &TrainingSet, index: usize) -> Result<SamplePass> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params, trainable(cfg))?;
    let sample = &data.samples[index];
    let a = tape.constant(sample.class_cosines.clone())?;
    let c = tape.constant(sample.concept_cosines.clone())?;
    let head = head_forward(&mut tape, &pv, a, c, cfg)?;
    let loss = attach_loss(
        &mut tape,
        &head,
        data.labels[index],
        data.sample_concept_labels(index),
        data.n_concepts,
        cfg,
    )?;
    tape.backward(loss.total)?;
    let item = |v| tape.value(v).item();
    Ok(SamplePass {
        grads: pv.vars().map(|v| tape.grad(v)),
        total: item(loss.total),
        ce: item(loss.ce),
        concept: item(loss.concept),
        surrogate: loss.surrogate.map_or(0.0, item),
        hard_sparsity: hard_sparsity(&tape, &head),
        predicted: argmax(tape.value(head.logits).data()),
        clamp_events: head.fusion.map_or(0, |f| f.clamp_events),
    })
}

/// Mean loss and gradient over `indices`. Samples run in parallel; the
/// reduction is sequential in index order so results do not depend on
/// scheduling.
pub fn batch_pass(
    params: &HeadParams,
    cfg: &TrainConfig,
    data: &TrainingSet,
    indices: &[usize],
) -> Result<(Vec<SamplePass>, [Tensor; 5])> {
    let passes = indices
        .par_iter()
        .map(|&i| sample_pass(params, cfg, data, i))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = params.tensors().map(|t| Tensor::zeros(t.shape()));
    let scale = 1.0 / indices.len() as f64;
    for pass in &passes {
        for (acc, g) in grads.iter_mut().zip(&pass.grads) {
            acc.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b * scale);
        }
    }
    Ok((passes, grads))
}

fn numeric_failure(epoch: usize, step: usize, err: Error) -> Error {
    match err {
        Error::NonFinite { op } => Error::NonFiniteLoss {
            epoch,
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains a freshly initialised head on `bundle`.
pub fn fit(bundle: &FeatureBundle, cfg: &TrainConfig) -> Result<(HeadParams, TrainReport)> {
    cfg.validate()?;
    let data = TrainingSet::from_bundle(bundle)?;
    fit_encoded(&data, cfg)
}

/// Trains a freshly initialised head on already-encoded samples.
pub fn fit_encoded(data: &TrainingSet, cfg: &TrainConfig) -> Result<(HeadParams, TrainReport)> {
    let params = HeadParams::init(data.n_classes, data.n_attributes * data.n_concepts);
    fit_from(params, data, cfg)
}

/// Trains starting from `params`.
pub fn fit_from(mut params: HeadParams, data: &TrainingSet, cfg: &TrainConfig) -> Result<(HeadParams, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() && cfg.epochs > 0 {
        return Err(Error::ConfigInvalid("cannot train on an empty bundle".into()));
    }
    let mut shuffle = rng::stream(cfg.seed, rng::SHUFFLE);
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.epsilon);
    let frozen = trainable(cfg).map(|t| !t);
    let decay = [false, false, false, true, true];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        mode: cfg.mode,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut sums = [0.0f64; 5];
        let mut clamp_events = 0;
        let mut predicted = Vec::with_capacity(data.len());
        let mut truth = Vec::with_capacity(data.len());
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let (passes, grads) = batch_pass(&params, cfg, data, batch).map_err(|e| numeric_failure(epoch, step, e))?;
            for (pass, &i) in passes.iter().zip(batch) {
                if !pass.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        detail: format!("sample {i} loss {}", pass.total),
                    });
                }
                for (s, v) in
                    sums.iter_mut()
                        .zip([pass.total, pass.ce, pass.concept, pass.hard_sparsity, pass.surrogate])
                {
                    *s += v;
                }
                clamp_events += pass.clamp_events;
                predicted.push(pass.predicted);
                truth.push(data.labels[i]);
            }
            let tau2_before = params.tau2;
            let mut values = params.tensors();
            {
                let mut slots: Vec<Slot<'_>> = values
                    .iter_mut()
                    .zip(&grads)
                    .enumerate()
                    .map(|(i, (v, g))| Slot {
                        values: v.data_mut(),
                        grads: g.data(),
                        decay: decay[i],
                        frozen: frozen[i],
                    })
                    .collect();
                opt.step(&mut slots);
            }
            params = HeadParams::from_tensors(&values);
            if !params.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: "parameters became non-finite after the optimizer step".into(),
                });
            }
            if params.tau1() <= 0.0 {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("tau1 underflowed to 0 (log_tau1 = {:e})", params.log_tau1),
                });
            }
            if tau2_before.signum() != params.tau2.signum() {
                warn!("tau2 changed sign at step {step}: {tau2_before} -> {}", params.tau2);
            }
        }
        let n = data.len() as f64;
        let metrics = EvalResult::from_predictions(&truth, &predicted, data.n_classes);
        let epoch_report = EpochReport {
            epoch,
            mode: cfg.mode,
            total_loss: sums[0] / n,
            ce_loss: sums[1] / n,
            concept_loss: sums[2] / n,
            hard_sparsity: sums[3] / n,
            surrogate_sparsity: sums[4] / n,
            train_acc: metrics.accuracy,
            train_bmac: metrics.balanced_accuracy,
            clamp_events,
            tau1: params.tau1(),
            tau2: params.tau2,
            k: params.k,
        };
        if clamp_events > 0 {
            warn!("epoch {epoch}: {clamp_events} adjustment exponents clamped");
        }
        info!(
            "epoch {epoch}: loss {:.5} acc {:.4} bmac {:.4} sparsity {:.4}",
            epoch_report.total_loss, epoch_report.train_acc, epoch_report.train_bmac, epoch_report.hard_sparsity
        );
        debug!(
            "tau1 {} tau2 {} K {}",
            epoch_report.tau1, epoch_report.tau2, epoch_report.k
        );
        report.epochs.push(epoch_report);
    }
    Ok((params, report))
}
