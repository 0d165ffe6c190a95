//! Classification metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};
use crate::head::{encode_samples, infer, EncodedSample, HeadParams, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// Mean recall over classes that occur in the labels.
    pub balanced_accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Recall per class; 0 for classes with no support.
    pub per_class_recall: Vec<f64>,
}

impl EvalResult {
    pub fn from_predictions(labels: &[usize], predicted: &[usize], n_classes: usize) -> Self {
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in labels.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        let support: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
        let per_class_recall: Vec<f64> = (0..n_classes)
            .map(|c| {
                if support[c] == 0 {
                    0.0
                } else {
                    confusion[c][c] as f64 / support[c] as f64
                }
            })
            .collect();
        let present: Vec<f64> = (0..n_classes)
            .filter(|&c| support[c] > 0)
            .map(|c| per_class_recall[c])
            .collect();
        EvalResult {
            accuracy: if labels.is_empty() {
                0.0
            } else {
                correct as f64 / labels.len() as f64
            },
            balanced_accuracy: if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            },
            confusion,
            per_class_recall,
        }
    }
}

/// Checks that `params` fit the class count and bottleneck width of `bundle`.
pub fn check_dimensions(bundle: &FeatureBundle, params: &HeadParams) -> Result<()> {
    let width = bundle.n_attributes() * bundle.n_concepts();
    if params.n_classes() != bundle.n_classes() || params.n_bottleneck() != width {
        return Err(Error::DimensionMismatch(format!(
            "head has {} classes over {} concepts, bundle has {} classes over {}",
            params.n_classes(),
            params.n_bottleneck(),
            bundle.n_classes(),
            width
        )));
    }
    Ok(())
}

/// Argmax predictions for every encoded sample.
pub fn predict(params: &HeadParams, cfg: &TrainConfig, samples: &[EncodedSample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| infer(params, cfg, s).map(|r| r.predicted()))
        .collect()
}

pub fn evaluate(bundle: &FeatureBundle, params: &HeadParams, cfg: &TrainConfig) -> Result<EvalResult> {
    check_dimensions(bundle, params)?;
    let samples = encode_samples(bundle)?;
    let predicted = predict(params, cfg, &samples)?;
    let labels: Vec<usize> = bundle.labels.iter().map(|&l| l as usize).collect();
    Ok(EvalResult::from_predictions(&labels, &predicted, bundle.n_classes()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 2, 1];
        let r = EvalResult::from_predictions(&labels, &labels, 3);
        assert_eq!((r.accuracy, r.balanced_accuracy), (1.0, 1.0));
    }

    #[test]
    fn recall_one_and_half_gives_three_quarters() {
        let labels = [0, 0, 0, 0, 0, 0, 1, 1];
        let predicted = [0, 0, 0, 0, 0, 0, 1, 0];
        let r = EvalResult::from_predictions(&labels, &predicted, 2);
        assert_eq!(r.per_class_recall, vec![1.0, 0.5]);
        assert_eq!(r.balanced_accuracy, 0.75);
        assert_eq!(r.accuracy, 7.0 / 8.0);
    }

    #[test]
    fn absent_classes_are_skipped() {
        let r = EvalResult::from_predictions(&[0, 0, 2], &[0, 1, 2], 3);
        assert_eq!(r.balanced_accuracy, (0.5 + 1.0) / 2.0);
        assert_eq!(r.confusion[1], vec![0, 0, 0]);
    }

    #[test]
    fn duplicating_a_class_moves_accuracy_but_not_bmac() {
        let labels = vec![0, 0, 1, 1, 1];
        let predicted = vec![0, 1, 1, 1, 0];
        let base = EvalResult::from_predictions(&labels, &predicted, 2);
        let mut l2 = labels.clone();
        let mut p2 = predicted.clone();
        for (l, p) in labels.iter().zip(&predicted) {
            if *l == 0 {
                l2.push(*l);
                p2.push(*p);
            }
        }
        let dup = EvalResult::from_predictions(&l2, &p2, 2);
        assert_eq!(base.balanced_accuracy, dup.balanced_accuracy);
        assert_ne!(base.accuracy, dup.accuracy);
    }

    proptest! {
        #[test]
        fn confusion_rows_sum_to_support(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (labels, predicted): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r = EvalResult::from_predictions(&labels, &predicted, 4);
            for c in 0..4 {
                let support = labels.iter().filter(|&&l| l == c).count();
                prop_assert_eq!(r.confusion[c].iter().sum::<usize>(), support);
            }
            prop_assert!((0.0..=1.0).contains(&r.accuracy));
            prop_assert!((0.0..=1.0).contains(&r.balanced_accuracy));
        }
    }
}
