use serde::{Deserialize, Serialize};

use super::ProbeError;

/// How F1 is averaged. `Binary` scores the acceptable (positive) class only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Average {
    #[default]
    Binary,
    Macro,
}

fn f1_for(predictions: &[bool], labels: &[bool], positive: bool) -> f64 {
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == positive, l == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        // precision + recall = 0 (or both undefined)
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fnn) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// F1 with `true` = acceptable as the positive class.
pub fn f1_score(predictions: &[bool], labels: &[bool]) -> Result<f64, ProbeError> {
    f1_score_with(predictions, labels, F1Average::Binary)
}

pub fn f1_score_with(
    predictions: &[bool],
    labels: &[bool],
    average: F1Average,
) -> Result<f64, ProbeError> {
    if predictions.len() != labels.len() {
        return Err(ProbeError::LengthMismatch {
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(ProbeError::TooFewSamples(0));
    }
    Ok(match average {
        F1Average::Binary => f1_for(predictions, labels, true),
        F1Average::Macro => {
            0.5 * (f1_for(predictions, labels, true) + f1_for(predictions, labels, false))
        }
    })
}
