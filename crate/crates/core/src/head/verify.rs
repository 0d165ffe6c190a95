use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::TrainConfig;
use super::forward::{head_forward, ParamVars};
use super::params::{HeadParams, PARAM_NAMES};
use super::train::{batch_pass, TrainingSet};
use crate::autodiff::{compare_gradients, GradCheckReport, Tape, Tensor};
use crate::bundle::{generate_synthetic, SynthConfig};
use crate::error::{Error, Result};
use crate::rng;

/// Settings for the end-to-end gradient check on a small synthetic problem.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    pub samples: usize,
    /// Points where any `|w|` lies closer than this to its layer threshold
    /// are redrawn, since the mask is not differentiable there.
    pub margin: f64,
    /// Adds a deliberate error to one analytic gradient entry.
    pub perturb_analytic: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 0,
            eps: 1e-6,
            tol: 1e-4,
            samples: 4,
            margin: 1e-4,
            perturb_analytic: false,
        }
    }
}

/// Dimensions of the toy problem.
pub fn toy_synth_config(seed: u64, samples: usize) -> SynthConfig {
    SynthConfig {
        n_samples: samples,
        n_layers: 3,
        n_attributes: 2,
        n_concepts_per_attr: 3,
        embed_dim: 8,
        n_patches: 16,
        n_classes: 2,
        planted_layers: vec![0, 2],
        signal_strength: 1.0,
        noise_scale: 0.5,
        seed,
    }
}

fn random_params(rng: &mut impl Rng, classes: usize, bottleneck: usize) -> HeadParams {
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut draw = |scale: f64| scale * unit.sample(rng);
    HeadParams {
        log_tau1: HeadParams::init(1, 1).log_tau1 + draw(0.3),
        tau2: 0.2 + draw(1.0),
        k: draw(1.0),
        w: Tensor::new(
            vec![classes, bottleneck],
            (0..classes * bottleneck).map(|_| draw(1.0)).collect(),
        )
        .expect("W shape"),
        b: Tensor::new(vec![classes], (0..classes).map(|_| draw(0.1)).collect()).expect("b shape"),
    }
}

fn min_gap(params: &HeadParams, cfg: &TrainConfig, data: &TrainingSet) -> Result<f64> {
    let mut smallest = f64::INFINITY;
    for sample in &data.samples {
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, params, [false; 5])?;
        let a = tape.constant(sample.class_cosines.clone())?;
        let c = tape.constant(sample.concept_cosines.clone())?;
        let head = head_forward(&mut tape, &pv, a, c, cfg)?;
        if let Some(f) = head.fusion {
            let gap = tape
                .value(f.gap)
                .data()
                .iter()
                .map(|g| g.abs())
                .fold(f64::INFINITY, f64::min);
            smallest = smallest.min(gap);
        }
    }
    Ok(smallest)
}

/// Compares the analytic gradient of the mean training loss with central
/// differences, for every trainable scalar and classifier entry.
pub fn gradient_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let bundle = generate_synthetic(&toy_synth_config(opts.seed, opts.samples))?;
    let data = TrainingSet::from_bundle(&bundle)?;
    let cfg = TrainConfig {
        lambda2: 0.1,
        ..TrainConfig::default()
    };
    let mut draws = rng::stream(opts.seed, rng::INIT);
    let bottleneck = data.n_attributes * data.n_concepts;
    let mut params = None;
    for _ in 0..100 {
        let candidate = random_params(&mut draws, data.n_classes, bottleneck);
        if min_gap(&candidate, &cfg, &data)? > opts.margin {
            params = Some(candidate);
            break;
        }
    }
    let params =
        params.ok_or_else(|| Error::ConfigInvalid("no draw kept every weight away from its threshold".into()))?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let (_, mut analytic) = batch_pass(&params, &cfg, &data, &indices)?;
    if opts.perturb_analytic {
        analytic[3].data_mut()[0] += 1e-2;
    }
    let named: Vec<(String, Tensor)> = PARAM_NAMES
        .iter()
        .map(|n| n.to_string())
        .zip(params.tensors())
        .collect();
    compare_gradients(
        |values| {
            let p = HeadParams::from_tensors(values);
            let (passes, _) = batch_pass(&p, &cfg, &data, &indices)?;
            Ok(passes.iter().map(|s| s.total).sum::<f64>() / passes.len() as f64)
        },
        &named,
        &analytic,
        opts.eps,
        opts.tol,
    )
}
