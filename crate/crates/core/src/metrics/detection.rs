use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion-matrix summary of a thresholded rain-mask prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

/// Scores `pred_prob ≥ threshold` against a binary ground truth.
///
/// With no positives anywhere (neither predicted nor true) precision,
/// recall and F1 are 1.
pub fn mask_metrics(pred_prob: &[f64], truth: &[f64], threshold: f64) -> Result<MaskMetrics> {
    if pred_prob.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} mask pixels",
            pred_prob.len(),
            truth.len()
        )));
    }
    if pred_prob.is_empty() {
        return Err(Error::Shape("empty mask".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred_prob.iter().zip(truth) {
        let t = match t {
            t if t == 1.0 => true,
            t if t == 0.0 => false,
            other => return Err(Error::Parameter(format!("mask value {other} is not binary"))),
        };
        match (p >= threshold, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize, empty: f64| if den == 0 { empty } else { num as f64 / den as f64 };
    let no_positives = tp + fp + fn_ == 0;
    let precision = ratio(tp, tp + fp, if no_positives { 1.0 } else { 0.0 });
    let recall = ratio(tp, tp + fn_, if no_positives { 1.0 } else { 0.0 });
    let f1 = if no_positives {
        1.0
    } else {
        ratio(2 * tp, 2 * tp + fp + fn_, 0.0)
    };
    Ok(MaskMetrics {
        accuracy: (tp + tn) as f64 / pred_prob.len() as f64,
        precision,
        recall,
        f1,
        true_positive: tp,
        false_positive: fp,
        true_negative: tn,
        false_negative: fn_,
    })
}

/// Accuracy of always predicting the more frequent class.
pub fn majority_baseline_accuracy(truth: &[f64]) -> f64 {
    let positives = truth.iter().filter(|&&t| t >= 0.5).count() as f64;
    let n = truth.len() as f64;
    positives.max(n - positives) / n
}
