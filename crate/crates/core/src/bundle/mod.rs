//! Feature bundles: per-layer visual tokens, concept text embeddings and
//! labels, plus the MVPB file format that carries them.

mod format;
mod synth;
mod validate;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use format::{decode_bundle, encode_bundle, read_bundle, write_bundle, MAGIC, VERSION};
pub use synth::{generate_synthetic, SynthConfig};
pub use validate::{validate_bundle, Violation};

/// Attribute names, their concept texts and the class-to-concept ground truth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSchema {
    pub class_names: Vec<String>,
    pub attribute_names: Vec<String>,
    /// `concept_texts[i][j]` is concept `j` of attribute `i`.
    pub concept_texts: Vec<Vec<String>>,
    /// `class_concept_map[c][i]` is the true concept of attribute `i` for class `c`.
    pub class_concept_map: Vec<Vec<u32>>,
}

impl ConceptSchema {
    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    /// Concepts per attribute (taken from the first attribute).
    pub fn n_concepts(&self) -> usize {
        self.concept_texts.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Concept labels of a sample of class `class`.
    pub fn concept_labels_for(&self, class: usize) -> &[u32] {
        &self.class_concept_map[class]
    }
}

/// Where the attribute-level embeddings came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrEmbedSource {
    /// Encoded from the concatenated concept texts.
    TextEncoder,
    /// Normalised mean of the concept embeddings (synthetic data).
    ConceptMean,
}

/// In-memory form of an MVPB file.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub schema: ConceptSchema,
    pub n_layers: usize,
    pub embed_dim: usize,
    pub n_patches: usize,
    pub attr_embed_source: AttrEmbedSource,
    /// Extra header keys written by producers, preserved on round trip.
    pub extra: serde_json::Map<String, serde_json::Value>,
    pub labels: Vec<u32>,
    /// `[n, m]`
    pub concept_labels: Vec<u32>,
    /// `[m, d]`
    pub attribute_embeddings: Vec<f32>,
    /// `[m, k, d]`
    pub concept_embeddings: Vec<f32>,
    /// `[n, L, 1 + N_p, d]`; token 0 of each layer is the class token.
    pub features: Vec<f32>,
}

impl FeatureBundle {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.schema.n_attributes()
    }

    pub fn n_concepts(&self) -> usize {
        self.schema.n_concepts()
    }

    pub fn n_classes(&self) -> usize {
        self.schema.n_classes()
    }

    pub fn tokens_per_layer(&self) -> usize {
        1 + self.n_patches
    }

    fn sample_len(&self) -> usize {
        self.n_layers * self.tokens_per_layer() * self.embed_dim
    }

    /// All tokens of one sample, `[L, 1 + N_p, d]`.
    pub fn sample_features(&self, sample: usize) -> &[f32] {
        let len = self.sample_len();
        &self.features[sample * len..(sample + 1) * len]
    }

    pub fn class_token(&self, sample: usize, layer: usize) -> &[f32] {
        let d = self.embed_dim;
        let start = layer * self.tokens_per_layer() * d;
        &self.sample_features(sample)[start..start + d]
    }

    /// Patch tokens of one layer, `[N_p, d]`.
    pub fn patch_tokens(&self, sample: usize, layer: usize) -> &[f32] {
        let d = self.embed_dim;
        let start = (layer * self.tokens_per_layer() + 1) * d;
        &self.sample_features(sample)[start..start + self.n_patches * d]
    }

    pub fn sample_concept_labels(&self, sample: usize) -> &[u32] {
        let m = self.n_attributes();
        &self.concept_labels[sample * m..(sample + 1) * m]
    }

    /// Bundle restricted to the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> FeatureBundle {
        let mut out = FeatureBundle {
            labels: Vec::with_capacity(indices.len()),
            concept_labels: Vec::with_capacity(indices.len() * self.n_attributes()),
            features: Vec::with_capacity(indices.len() * self.sample_len()),
            ..self.clone_without_samples()
        };
        for &i in indices {
            out.labels.push(self.labels[i]);
            out.concept_labels.extend_from_slice(self.sample_concept_labels(i));
            out.features.extend_from_slice(self.sample_features(i));
        }
        out
    }

    fn clone_without_samples(&self) -> FeatureBundle {
        FeatureBundle {
            schema: self.schema.clone(),
            n_layers: self.n_layers,
            embed_dim: self.embed_dim,
            n_patches: self.n_patches,
            attr_embed_source: self.attr_embed_source,
            extra: self.extra.clone(),
            labels: Vec::new(),
            concept_labels: Vec::new(),
            attribute_embeddings: self.attribute_embeddings.clone(),
            concept_embeddings: self.concept_embeddings.clone(),
            features: Vec::new(),
        }
    }

    /// Hex SHA-256 over the dimensions (sample count excluded) and the schema.
    /// Checkpoints record it to refuse bundles of a different shape.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::json!({
            "n_layers": self.n_layers,
            "n_attributes": self.n_attributes(),
            "n_concepts_per_attr": self.n_concepts(),
            "embed_dim": self.embed_dim,
            "n_patches": self.n_patches,
            "n_classes": self.n_classes(),
            "class_names": self.schema.class_names,
            "attribute_names": self.schema.attribute_names,
            "concept_texts": self.schema.concept_texts,
            "class_concept_map": self.schema.class_concept_map,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}
