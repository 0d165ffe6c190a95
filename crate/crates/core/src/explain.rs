//! Per-sample concept explanations and plot-ready exports.
//!
//! Files written here are UTF-8 CSV (or JSON lines) with a one-line JSON
//! sidecar `<file>.meta.json` describing the axes. Layers are 0-based.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};
use crate::eval::check_dimensions;
use crate::head::{infer, Encoder, HeadParams, Inference, Mode, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub attribute: usize,
    pub attribute_name: String,
    pub concept: usize,
    pub concept_text: String,
    /// Min-max normalised bottleneck activation, in `[0, 1]`.
    pub score: f64,
    pub activation: f64,
    /// Layer with the largest sparse weight for this concept.
    pub winning_layer: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub sample: usize,
    pub predicted_class: usize,
    pub predicted_class_name: String,
    pub true_class: usize,
    pub true_class_name: String,
    pub concepts: Vec<RankedConcept>,
}

/// Min-max normalisation to `[0, 1]`; a constant vector maps to all ones.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; values.len()]
    }
}

/// Indices of the `topk` largest normalised activations with their scores,
/// ties broken by index (attribute-major, so by attribute then concept).
pub fn rank_concepts(activations: &[f64], topk: usize) -> Vec<(usize, f64)> {
    let scores = min_max_normalize(activations);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(topk.min(scores.len()));
    order.into_iter().map(|i| (i, scores[i])).collect()
}

/// Layer with the largest sparse weight for every bottleneck entry, lowest
/// layer on ties. Without fusion every concept comes from the last layer.
fn winning_layers(inference: &Inference, n_layers: usize) -> Vec<usize> {
    let width = inference.bottleneck.len();
    match &inference.state {
        Some(state) => (0..width)
            .map(|c| {
                let w = state.sparse_weights.data();
                let mut best = 0;
                for l in 1..n_layers {
                    if w[l * width + c] > w[best * width + c] {
                        best = l;
                    }
                }
                best
            })
            .collect(),
        None => vec![n_layers - 1; width],
    }
}

fn build_explanation(bundle: &FeatureBundle, sample: usize, inference: &Inference, topk: usize) -> Explanation {
    let k = bundle.n_concepts();
    let schema = &bundle.schema;
    let winners = winning_layers(inference, bundle.n_layers);
    let predicted = inference.predicted();
    let truth = bundle.labels[sample] as usize;
    Explanation {
        sample,
        predicted_class: predicted,
        predicted_class_name: schema.class_names[predicted].clone(),
        true_class: truth,
        true_class_name: schema.class_names[truth].clone(),
        concepts: rank_concepts(&inference.bottleneck, topk)
            .into_iter()
            .map(|(idx, score)| RankedConcept {
                attribute: idx / k,
                attribute_name: schema.attribute_names[idx / k].clone(),
                concept: idx % k,
                concept_text: schema.concept_texts[idx / k][idx % k].clone(),
                score,
                activation: inference.bottleneck[idx],
                winning_layer: winners[idx],
            })
            .collect(),
    }
}

fn check_sample(bundle: &FeatureBundle, sample: usize) -> Result<()> {
    if sample >= bundle.n_samples() {
        return Err(Error::SampleOutOfRange {
            index: sample,
            len: bundle.n_samples(),
        });
    }
    Ok(())
}

fn check_topk(topk: usize) -> Result<()> {
    if topk == 0 {
        return Err(Error::ConfigInvalid("topk must be at least 1".into()));
    }
    Ok(())
}

/// Top-`topk` concepts of one sample.
pub fn explain(
    bundle: &FeatureBundle,
    params: &HeadParams,
    cfg: &TrainConfig,
    sample: usize,
    topk: usize,
) -> Result<Explanation> {
    check_topk(topk)?;
    check_dimensions(bundle, params)?;
    check_sample(bundle, sample)?;
    let encoded = Encoder::new(bundle)?.encode(bundle, sample)?;
    let inference = infer(params, cfg, &encoded)?;
    Ok(build_explanation(bundle, sample, &inference, topk))
}

/// Explanations for every sample, in sample order.
pub fn explain_all(
    bundle: &FeatureBundle,
    params: &HeadParams,
    cfg: &TrainConfig,
    topk: usize,
) -> Result<Vec<Explanation>> {
    check_topk(topk)?;
    check_dimensions(bundle, params)?;
    let encoder = Encoder::new(bundle)?;
    (0..bundle.n_samples())
        .into_par_iter()
        .map(|s| {
            let inference = infer(params, cfg, &encoder.encode(bundle, s)?)?;
            Ok(build_explanation(bundle, s, &inference, topk))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    pub layer: usize,
    pub attribute: String,
    pub mean: f64,
    /// Population standard deviation over samples.
    pub std: f64,
}

/// Mean and spread over samples of every layer-attribute preference.
pub fn export_preference_profile(
    bundle: &FeatureBundle,
    params: &HeadParams,
    cfg: &TrainConfig,
) -> Result<Vec<ProfileRow>> {
    if cfg.mode == Mode::BaselineLastLayer {
        return Err(Error::ConfigInvalid(
            "the last-layer baseline has no layer preference".into(),
        ));
    }
    check_dimensions(bundle, params)?;
    let encoder = Encoder::new(bundle)?;
    let prefs = (0..bundle.n_samples())
        .into_par_iter()
        .map(|s| {
            let inference = infer(params, cfg, &encoder.encode(bundle, s)?)?;
            Ok(inference.state.expect("full mode captures state").preference)
        })
        .collect::<Result<Vec<Tensor>>>()?;
    let (layers, m) = (bundle.n_layers, bundle.n_attributes());
    let n = prefs.len().max(1) as f64;
    let mut rows = Vec::with_capacity(layers * m);
    for l in 0..layers {
        for i in 0..m {
            let values = prefs.iter().map(|p| p.data()[l * m + i]);
            let mean = values.clone().sum::<f64>() / n;
            let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            rows.push(ProfileRow {
                layer: l,
                attribute: bundle.schema.attribute_names[i].clone(),
                mean,
                std: var.sqrt(),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActivationRow {
    pub layer: usize,
    pub attribute: String,
    pub concept: String,
    pub value: f64,
}

/// Per-layer activation scores of one sample before (`dense`) and after
/// (`sparse`, scores times sparse weights) masking.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMaps {
    pub dense: Vec<ActivationRow>,
    pub sparse: Vec<ActivationRow>,
}

pub fn export_activation_maps(
    bundle: &FeatureBundle,
    params: &HeadParams,
    cfg: &TrainConfig,
    sample: usize,
) -> Result<ActivationMaps> {
    if cfg.mode == Mode::BaselineLastLayer {
        return Err(Error::ConfigInvalid(
            "the last-layer baseline has no layer activations".into(),
        ));
    }
    check_dimensions(bundle, params)?;
    check_sample(bundle, sample)?;
    let inference = infer(params, cfg, &Encoder::new(bundle)?.encode(bundle, sample)?)?;
    let state = inference.state.expect("full mode captures state");
    let rows = |t: &Tensor| {
        let schema = &bundle.schema;
        let (m, k) = (bundle.n_attributes(), bundle.n_concepts());
        t.data()
            .iter()
            .enumerate()
            .map(|(idx, &value)| {
                let (l, i, j) = (idx / (m * k), (idx / k) % m, idx % k);
                ActivationRow {
                    layer: l,
                    attribute: schema.attribute_names[i].clone(),
                    concept: schema.concept_texts[i][j].clone(),
                    value,
                }
            })
            .collect()
    };
    Ok(ActivationMaps {
        dense: rows(&state.scores),
        sparse: rows(&state.sparse_activation()),
    })
}

#[derive(Serialize)]
struct Sidecar<'a> {
    file: &'a str,
    columns: &'a [&'a str],
    n_layers: usize,
    layer_index_base: usize,
    attributes: &'a [String],
    concepts: &'a [Vec<String>],
    #[serde(skip_serializing_if = "Option::is_none")]
    sample: Option<usize>,
}

fn write_sidecar(path: &Path, columns: &[&str], bundle: &FeatureBundle, sample: Option<usize>) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let meta = Sidecar {
        file: name,
        columns,
        n_layers: bundle.n_layers,
        layer_index_base: 0,
        attributes: &bundle.schema.attribute_names,
        concepts: &bundle.schema.concept_texts,
        sample,
    };
    let meta_path = path.with_file_name(format!("{name}.meta.json"));
    let mut line = serde_json::to_string(&meta)?;
    line.push('\n');
    fs::write(&meta_path, line).map_err(|e| Error::io(&meta_path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_preference_profile(path: &Path, rows: &[ProfileRow], bundle: &FeatureBundle) -> Result<()> {
    write_csv(path, rows)?;
    write_sidecar(path, &["layer", "attribute", "mean", "std"], bundle, None)
}

pub fn write_activation_map(path: &Path, rows: &[ActivationRow], bundle: &FeatureBundle, sample: usize) -> Result<()> {
    write_csv(path, rows)?;
    write_sidecar(path, &["layer", "attribute", "concept", "value"], bundle, Some(sample))
}

pub fn write_explanations(path: &Path, explanations: &[Explanation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for e in explanations {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the preference profile, both activation maps of `sample` and the
/// explanations of every sample into `dir`.
pub fn export_all(
    dir: &Path,
    bundle: &FeatureBundle,
    params: &HeadParams,
    cfg: &TrainConfig,
    sample: usize,
    topk: usize,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if cfg.mode == Mode::Full {
        let profile = export_preference_profile(bundle, params, cfg)?;
        write_preference_profile(&dir.join("preference_profile.csv"), &profile, bundle)?;
        let maps = export_activation_maps(bundle, params, cfg, sample)?;
        write_activation_map(&dir.join("activation_dense.csv"), &maps.dense, bundle, sample)?;
        write_activation_map(&dir.join("activation_sparse.csv"), &maps.sparse, bundle, sample)?;
        written.extend(
            [
                "preference_profile.csv",
                "activation_dense.csv",
                "activation_sparse.csv",
            ]
            .map(String::from),
        );
    }
    let explanations = explain_all(bundle, params, cfg, topk)?;
    write_explanations(&dir.join("explanations.jsonl"), &explanations)?;
    written.push("explanations.jsonl".into());
    Ok(written)
}
