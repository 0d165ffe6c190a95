//! MVPB v1 reader and writer.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! 0..4    b"MVPB"
//! 4..8    version: u32 (= 1)
//! 8..16   header length: u64
//! ...     UTF-8 JSON header
//! ...     labels [n] u32, concept_labels [n*m] u32,
//!         attribute_embeddings [m*d] f32, concept_embeddings [m*k*d] f32,
//!         features [n*L*(1+N_p)*d] f32
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_bundle, AttrEmbedSource, ConceptSchema, FeatureBundle};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MVPB";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Serialize, Deserialize)]
struct Header {
    n_samples: usize,
    n_layers: usize,
    n_attributes: usize,
    n_concepts_per_attr: usize,
    embed_dim: usize,
    n_patches: usize,
    n_classes: usize,
    class_names: Vec<String>,
    attribute_names: Vec<String>,
    concept_texts: Vec<Vec<String>>,
    class_concept_map: Vec<Vec<u32>>,
    attr_embed_source: AttrEmbedSource,
    #[serde(flatten)]
    extra: serde_json::Map<String, serde_json::Value>,
}

fn validation_error(bundle: &FeatureBundle) -> Result<()> {
    let violations = validate_bundle(bundle);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::ValidationFailed(
            violations.iter().map(ToString::to_string).collect(),
        ))
    }
}

/// Serialises a bundle to bytes. The bundle must validate.
pub fn encode_bundle(bundle: &FeatureBundle) -> Result<Vec<u8>> {
    validation_error(bundle)?;
    let schema = &bundle.schema;
    let header = Header {
        n_samples: bundle.n_samples(),
        n_layers: bundle.n_layers,
        n_attributes: schema.n_attributes(),
        n_concepts_per_attr: schema.n_concepts(),
        embed_dim: bundle.embed_dim,
        n_patches: bundle.n_patches,
        n_classes: schema.n_classes(),
        class_names: schema.class_names.clone(),
        attribute_names: schema.attribute_names.clone(),
        concept_texts: schema.concept_texts.clone(),
        class_concept_map: schema.class_concept_map.clone(),
        attr_embed_source: bundle.attr_embed_source,
        extra: bundle.extra.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let words = bundle.labels.len()
        + bundle.concept_labels.len()
        + bundle.attribute_embeddings.len()
        + bundle.concept_embeddings.len()
        + bundle.features.len();
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + 4 * words);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for section in [&bundle.labels, &bundle.concept_labels] {
        section.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    for section in [
        &bundle.attribute_embeddings,
        &bundle.concept_embeddings,
        &bundle.features,
    ] {
        section.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    Ok(out)
}

pub fn write_bundle(bundle: &FeatureBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bundle(bundle)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    writer.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<FeatureBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn words(&mut self, count: usize) -> impl Iterator<Item = [u8; 4]> + '_ {
        let slice = &self.bytes[self.pos..self.pos + 4 * count];
        self.pos += 4 * count;
        slice.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]])
    }

    fn u32s(&mut self, count: usize) -> Vec<u32> {
        self.words(count).map(u32::from_le_bytes).collect()
    }

    fn f32s(&mut self, count: usize, section: &'static str) -> Result<Vec<f32>> {
        let values: Vec<f32> = self.words(count).map(f32::from_le_bytes).collect();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { section, index });
        }
        Ok(values)
    }
}

fn mismatch(detail: impl Into<String>) -> Error {
    Error::HeaderPayloadMismatch(detail.into())
}

pub fn decode_bundle(bytes: &[u8]) -> Result<FeatureBundle> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(mismatch(format!(
            "file is {} bytes, shorter than the preamble",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(PREAMBLE))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| mismatch(format!("header length {header_len} exceeds file size {}", bytes.len())))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])?;

    let checks = [
        ("class_names", header.class_names.len(), header.n_classes),
        ("attribute_names", header.attribute_names.len(), header.n_attributes),
        ("concept_texts", header.concept_texts.len(), header.n_attributes),
        ("class_concept_map", header.class_concept_map.len(), header.n_classes),
    ];
    for (field, found, declared) in checks {
        if found != declared {
            return Err(mismatch(format!(
                "header declares {declared} entries for {field}, lists {found}"
            )));
        }
    }
    if let Some(row) = header
        .concept_texts
        .iter()
        .find(|r| r.len() != header.n_concepts_per_attr)
    {
        return Err(mismatch(format!(
            "header declares {} concepts per attribute, an attribute lists {}",
            header.n_concepts_per_attr,
            row.len()
        )));
    }

    let (n, m, k, d) = (
        header.n_samples,
        header.n_attributes,
        header.n_concepts_per_attr,
        header.embed_dim,
    );
    let feature_count = [n, header.n_layers, header.n_patches + 1, d]
        .iter()
        .try_fold(1usize, |acc, &x| acc.checked_mul(x));
    let counts = feature_count.and_then(|f| {
        Some([
            n,
            n.checked_mul(m)?,
            m.checked_mul(d)?,
            m.checked_mul(k)?.checked_mul(d)?,
            f,
        ])
    });
    let counts = counts.ok_or_else(|| mismatch("header dimensions overflow"))?;
    let expected_bytes = counts
        .iter()
        .try_fold(0usize, |acc, &c| acc.checked_add(c.checked_mul(4)?))
        .ok_or_else(|| mismatch("header dimensions overflow"))?;
    let payload = bytes.len() - header_end;
    if payload != expected_bytes {
        return Err(mismatch(format!(
            "header implies {expected_bytes} payload bytes, file has {payload}"
        )));
    }

    let mut cursor = Cursor { bytes, pos: header_end };
    let labels = cursor.u32s(counts[0]);
    let concept_labels = cursor.u32s(counts[1]);
    let attribute_embeddings = cursor.f32s(counts[2], "attribute_embeddings")?;
    let concept_embeddings = cursor.f32s(counts[3], "concept_embeddings")?;
    let features = cursor.f32s(counts[4], "features")?;

    let bundle = FeatureBundle {
        schema: ConceptSchema {
            class_names: header.class_names,
            attribute_names: header.attribute_names,
            concept_texts: header.concept_texts,
            class_concept_map: header.class_concept_map,
        },
        n_layers: header.n_layers,
        embed_dim: d,
        n_patches: header.n_patches,
        attr_embed_source: header.attr_embed_source,
        extra: header.extra,
        labels,
        concept_labels,
        attribute_embeddings,
        concept_embeddings,
        features,
    };
    validation_error(&bundle)?;
    Ok(bundle)
}
