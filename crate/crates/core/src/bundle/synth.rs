//! Synthetic bundles with a planted layer per attribute.
//!
//! Concept embeddings are random unit vectors and each attribute embedding is
//! the normalised mean of its concepts. For a sample of class `y`, attribute
//! `i` writes `signal_strength * t_i^{c}` (with `c` the class's concept for
//! `i`) into the class token and into the patch tokens of segment `i` at
//! layer `planted_layers[i]`, plus isotropic Gaussian noise of per-coordinate
//! std `noise_scale / sqrt(d)`. Tokens that carry no signal are pure noise; if
//! `noise_scale` is zero they use unit-norm-scale noise instead so every token
//! keeps a direction.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AttrEmbedSource, ConceptSchema, FeatureBundle};
use crate::error::{Error, Result};
use crate::mcsaf::PoolingPlan;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_layers: usize,
    pub n_attributes: usize,
    pub n_concepts_per_attr: usize,
    pub embed_dim: usize,
    pub n_patches: usize,
    pub n_classes: usize,
    /// Layer carrying each attribute's signal. Empty spreads attributes evenly
    /// over the layers.
    pub planted_layers: Vec<usize>,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 256,
            n_layers: 6,
            n_attributes: 3,
            n_concepts_per_attr: 3,
            embed_dim: 16,
            n_patches: 12,
            n_classes: 3,
            planted_layers: Vec::new(),
            signal_strength: 1.0,
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Planted layer of every attribute, filling in the even spread when
    /// `planted_layers` is empty.
    pub fn resolved_planted_layers(&self) -> Vec<usize> {
        if self.planted_layers.is_empty() {
            (0..self.n_attributes)
                .map(|i| (i * self.n_layers) / self.n_attributes.max(1))
                .collect()
        } else {
            self.planted_layers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::ConfigInvalid(msg));
        for (name, v) in [
            ("n_samples", self.n_samples),
            ("n_layers", self.n_layers),
            ("n_attributes", self.n_attributes),
            ("n_concepts_per_attr", self.n_concepts_per_attr),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return invalid(format!("{name} must be at least 1"));
            }
        }
        if self.n_classes < 2 {
            return invalid(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.n_patches < self.n_attributes {
            return Err(Error::TooFewPatches {
                patches: self.n_patches,
                attributes: self.n_attributes,
            });
        }
        let assignments = (self.n_concepts_per_attr as f64).powi(self.n_attributes as i32);
        if self.n_classes as f64 > assignments {
            return invalid(format!(
                "{} classes cannot have distinct concept assignments with {} attributes of {} concepts",
                self.n_classes, self.n_attributes, self.n_concepts_per_attr
            ));
        }
        let planted = self.resolved_planted_layers();
        if planted.len() != self.n_attributes {
            return invalid(format!(
                "planted_layers has {} entries for {} attributes",
                planted.len(),
                self.n_attributes
            ));
        }
        if let Some(&l) = planted.iter().find(|&&l| l >= self.n_layers) {
            return invalid(format!("planted layer {l} not below n_layers {}", self.n_layers));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return invalid(format!(
                "signal_strength must be finite and >= 0, got {}",
                self.signal_strength
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return invalid(format!("noise_scale must be finite and >= 0, got {}", self.noise_scale));
        }
        if self.signal_strength == 0.0 && self.noise_scale == 0.0 {
            return invalid("signal_strength and noise_scale cannot both be zero".into());
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn class_assignments(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<Vec<u32>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(cfg.n_classes);
    while out.len() < cfg.n_classes {
        let row: Vec<u32> = (0..cfg.n_attributes)
            .map(|_| rng.random_range(0..cfg.n_concepts_per_attr as u32))
            .collect();
        if seen.insert(row.clone()) {
            out.push(row);
        }
    }
    out
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<FeatureBundle> {
    cfg.validate()?;
    let (n, layers, m, k, d, patches) = (
        cfg.n_samples,
        cfg.n_layers,
        cfg.n_attributes,
        cfg.n_concepts_per_attr,
        cfg.embed_dim,
        cfg.n_patches,
    );
    let planted = cfg.resolved_planted_layers();
    let plan = PoolingPlan::new(patches, m)?;
    let mut rng = rng::stream(cfg.seed, rng::SYNTH);

    let concepts: Vec<Vec<f64>> = (0..m * k).map(|_| unit_vector(&mut rng, d)).collect();
    let attributes: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut mean = vec![0.0; d];
            for j in 0..k {
                mean.iter_mut().zip(&concepts[i * k + j]).for_each(|(a, b)| *a += b);
            }
            let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                mean.into_iter().map(|x| x / norm).collect()
            } else {
                concepts[i * k].clone()
            }
        })
        .collect();
    let class_map = class_assignments(cfg, &mut rng);

    let tokens = patches + 1;
    let signal_std = cfg.noise_scale / (d as f64).sqrt();
    let background_std = if cfg.noise_scale > 0.0 { cfg.noise_scale } else { 1.0 } / (d as f64).sqrt();
    let labels: Vec<u32> = (0..n).map(|s| (s % cfg.n_classes) as u32).collect();
    let mut concept_labels = Vec::with_capacity(n * m);
    let mut features = Vec::with_capacity(n * layers * tokens * d);
    let mut token = vec![0.0f64; d];
    for &label in &labels {
        let truth = &class_map[label as usize];
        concept_labels.extend_from_slice(truth);
        for layer in 0..layers {
            for t in 0..tokens {
                token.iter_mut().for_each(|v| *v = 0.0);
                let mut carries_signal = false;
                for attr in (0..m).filter(|&i| planted[i] == layer) {
                    let in_segment = t > 0 && plan.segment(attr).contains(&(t - 1));
                    if t == 0 || in_segment {
                        carries_signal = true;
                        let concept = &concepts[attr * k + truth[attr] as usize];
                        token
                            .iter_mut()
                            .zip(concept)
                            .for_each(|(v, c)| *v += cfg.signal_strength * c);
                    }
                }
                let std = if carries_signal { signal_std } else { background_std };
                for v in token.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += std * z;
                }
                features.extend(token.iter().map(|&v| v as f32));
            }
        }
    }

    let flatten = |rows: &[Vec<f64>]| rows.iter().flatten().map(|&v| v as f32).collect::<Vec<f32>>();
    let mut extra = serde_json::Map::new();
    extra.insert("generator".into(), serde_json::json!("synthetic"));
    extra.insert("planted_layers".into(), serde_json::json!(planted));
    Ok(FeatureBundle {
        schema: ConceptSchema {
            class_names: (0..cfg.n_classes).map(|c| format!("class_{c}")).collect(),
            attribute_names: (0..m).map(|i| format!("attribute_{i}")).collect(),
            concept_texts: (0..m)
                .map(|i| (0..k).map(|j| format!("attribute_{i} concept_{j}")).collect())
                .collect(),
            class_concept_map: class_map,
        },
        n_layers: layers,
        embed_dim: d,
        n_patches: patches,
        attr_embed_source: AttrEmbedSource::ConceptMean,
        extra,
        labels,
        concept_labels,
        attribute_embeddings: flatten(&attributes),
        concept_embeddings: flatten(&concepts),
        features,
    })
}
