//! Confusion-matrix metrics and AUC-ROC for the binary melanoma task.
//!
//! The positive class is the set's `positive_class`; a record is predicted
//! positive when its argmax class is the positive class. Metrics whose
//! denominator is zero are `None`, never zero by convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EvaluationSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Misclassified records (false positives plus false negatives).
    pub fn errors(&self) -> u64 {
        self.fp + self.fn_
    }

    /// Tally one prediction.
    pub fn record(&mut self, actual_positive: bool, predicted_positive: bool) {
        match (actual_positive, predicted_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc_roc: Option<f64>,
}

/// Tally predictions against ground truth. Every record must be labeled.
pub fn confusion_counts(set: &EvaluationSet) -> Result<ConfusionCounts> {
    if set.is_empty() {
        return Err(Error::Empty("labeled evaluation set".into()));
    }
    let pos = set.positive_class();
    let mut c = ConfusionCounts::default();
    for r in set.records() {
        let truth = r.true_label.ok_or_else(|| Error::MissingLabel(r.sample_id.clone()))?;
        c.record(truth == pos, r.predicted() == pos);
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_metrics(c: &ConfusionCounts, auc: Option<f64>) -> ClassificationMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    ClassificationMetrics {
        precision,
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        f1,
        accuracy: ratio(c.tp + c.tn, c.total()),
        auc_roc: auc,
    }
}

/// Area under the ROC curve, equal to the Mann-Whitney probability that a
/// random positive outscores a random negative, ties counting one half.
///
/// Computed by sorting once and sweeping groups of tied scores, with all
/// pair credit accumulated as integers (in half-units) so the result is
/// bit-identical to exhaustive pair counting.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidParameter(format!("score {s} is not a number")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the Mann-Whitney U statistic.
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_g, mut neg_g) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_g += 1;
            } else {
                neg_g += 1;
            }
            j += 1;
        }
        twice_u += pos_g * (2 * neg_below + neg_g);
        neg_below += neg_g;
        i = j;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// AUC of the positive-class probability over a labeled set, `None` when
/// the set holds a single class.
pub fn set_auc(set: &EvaluationSet) -> Result<Option<f64>> {
    let labels = set
        .records()
        .iter()
        .map(|r| set.is_positive(r).ok_or_else(|| Error::MissingLabel(r.sample_id.clone())))
        .collect::<Result<Vec<bool>>>()?;
    match auc_roc(&set.positive_scores(), &labels) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedAuc(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Confusion counts plus derived metrics for a labeled set.
pub fn evaluate_classification(set: &EvaluationSet) -> Result<(ConfusionCounts, ClassificationMetrics)> {
    let counts = confusion_counts(set)?;
    let auc = set_auc(set)?;
    Ok((counts, classification_metrics(&counts, auc)))
}
