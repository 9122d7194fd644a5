//! Classification metrics from a confusion matrix.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true instances of the class.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Set for language-model evaluations.
    pub perplexity: Option<f64>,
}

/// Metrics for `n_classes`-way predictions against true labels.
pub fn compute_metrics(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predictions.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::Config(format!("class index outside 0..{n_classes}")));
        }
        confusion[l][p] += 1;
    }
    Ok(from_confusion(confusion))
}

/// Per-class one-versus-all scores; a class with no true or predicted
/// instances scores F1 = 0.
pub fn from_confusion(confusion: Vec<Vec<usize>>) -> MetricsReport {
    let n = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let actual: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            ClassMetrics {
                precision: ratio(tp, predicted),
                recall: ratio(tp, actual),
                f1: ratio(2 * tp, actual + predicted),
                support: actual,
            }
        })
        .collect();
    MetricsReport {
        accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n.max(1) as f64,
        per_class,
        confusion,
        perplexity: None,
    }
}

/// `exp` of a mean cross-entropy in nats.
pub fn perplexity(mean_nll: f64) -> f64 {
    mean_nll.exp()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
