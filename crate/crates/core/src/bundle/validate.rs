use thiserror::Error;

use super::FeatureBundle;

/// One broken invariant of a bundle or its schema.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("schema has no attributes")]
    NoAttributes,
    #[error("attributes have no concepts")]
    NoConcepts,
    #[error("at least 2 classes required, found {0}")]
    TooFewClasses(usize),
    #[error("attribute {attribute} has {found} concepts, expected {expected}")]
    RaggedConcepts {
        attribute: usize,
        found: usize,
        expected: usize,
    },
    #[error("concept_texts has {found} attributes, attribute_names has {expected}")]
    ConceptTextCount { found: usize, expected: usize },
    #[error("class_concept_map has {found} rows, expected {expected}")]
    ClassMapRows { found: usize, expected: usize },
    #[error("class_concept_map row {class} has {found} entries, expected {expected}")]
    ClassMapWidth {
        class: usize,
        found: usize,
        expected: usize,
    },
    #[error("class_concept_map[{class}][{attribute}] = {value} is not < {concepts}")]
    ClassMapEntry {
        class: usize,
        attribute: usize,
        value: u32,
        concepts: usize,
    },
    #[error("{what} must be at least 1")]
    ZeroDimension { what: &'static str },
    #[error("section {section} has {found} values, expected {expected}")]
    SectionLength {
        section: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("attribute embedding {attribute} has zero norm")]
    ZeroNormAttribute { attribute: usize },
    #[error("concept embedding ({attribute}, {concept}) has zero norm")]
    ZeroNormConcept { attribute: usize, concept: usize },
    #[error("sample {sample} has label {label}, only {classes} classes")]
    LabelOutOfRange { sample: usize, label: u32, classes: usize },
    #[error("sample {sample} attribute {attribute} has concept label {label}, only {concepts} concepts")]
    ConceptLabelOutOfRange {
        sample: usize,
        attribute: usize,
        label: u32,
        concepts: usize,
    },
    #[error("non-finite value in {section} at element {index}")]
    NonFinite { section: &'static str, index: usize },
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// Checks every structural and numeric invariant of `bundle`. Empty means valid.
pub fn validate_bundle(bundle: &FeatureBundle) -> Vec<Violation> {
    let mut out = Vec::new();
    let schema = &bundle.schema;
    let m = schema.n_attributes();
    let k = schema.n_concepts();
    let classes = schema.n_classes();
    let d = bundle.embed_dim;
    let n = bundle.n_samples();

    if m == 0 {
        out.push(Violation::NoAttributes);
    }
    if k == 0 && m > 0 {
        out.push(Violation::NoConcepts);
    }
    if classes < 2 {
        out.push(Violation::TooFewClasses(classes));
    }
    if schema.concept_texts.len() != m {
        out.push(Violation::ConceptTextCount {
            found: schema.concept_texts.len(),
            expected: m,
        });
    }
    for (attribute, concepts) in schema.concept_texts.iter().enumerate() {
        if concepts.len() != k {
            out.push(Violation::RaggedConcepts {
                attribute,
                found: concepts.len(),
                expected: k,
            });
        }
    }
    if schema.class_concept_map.len() != classes {
        out.push(Violation::ClassMapRows {
            found: schema.class_concept_map.len(),
            expected: classes,
        });
    }
    for (class, row) in schema.class_concept_map.iter().enumerate() {
        if row.len() != m {
            out.push(Violation::ClassMapWidth {
                class,
                found: row.len(),
                expected: m,
            });
        }
        for (attribute, &value) in row.iter().enumerate() {
            if value as usize >= k {
                out.push(Violation::ClassMapEntry {
                    class,
                    attribute,
                    value,
                    concepts: k,
                });
            }
        }
    }
    for (what, value) in [
        ("n_layers", bundle.n_layers),
        ("embed_dim", d),
        ("n_patches", bundle.n_patches),
    ] {
        if value == 0 {
            out.push(Violation::ZeroDimension { what });
        }
    }

    let sections: [(&'static str, usize, usize); 4] = [
        ("concept_labels", bundle.concept_labels.len(), n * m),
        ("attribute_embeddings", bundle.attribute_embeddings.len(), m * d),
        ("concept_embeddings", bundle.concept_embeddings.len(), m * k * d),
        (
            "features",
            bundle.features.len(),
            n * bundle.n_layers * bundle.tokens_per_layer() * d,
        ),
    ];
    let mut lengths_ok = true;
    for (section, found, expected) in sections {
        if found != expected {
            lengths_ok = false;
            out.push(Violation::SectionLength {
                section,
                found,
                expected,
            });
        }
    }

    for (section, values) in [
        ("attribute_embeddings", &bundle.attribute_embeddings),
        ("concept_embeddings", &bundle.concept_embeddings),
        ("features", &bundle.features),
    ] {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            out.push(Violation::NonFinite { section, index });
        }
    }

    if lengths_ok && d > 0 {
        for (attribute, row) in bundle.attribute_embeddings.chunks_exact(d).enumerate() {
            if row_norm(row) <= 0.0 {
                out.push(Violation::ZeroNormAttribute { attribute });
            }
        }
        for (idx, row) in bundle.concept_embeddings.chunks_exact(d).enumerate() {
            if row_norm(row) <= 0.0 {
                out.push(Violation::ZeroNormConcept {
                    attribute: idx / k.max(1),
                    concept: idx % k.max(1),
                });
            }
        }
    }

    for (sample, &label) in bundle.labels.iter().enumerate() {
        if label as usize >= classes {
            out.push(Violation::LabelOutOfRange { sample, label, classes });
        }
    }
    for (sample, row) in bundle.concept_labels.chunks(m.max(1)).enumerate() {
        for (attribute, &label) in row.iter().enumerate() {
            if label as usize >= k {
                out.push(Violation::ConceptLabelOutOfRange {
                    sample,
                    attribute,
                    label,
                    concepts: k,
                });
            }
        }
    }
    out
}
