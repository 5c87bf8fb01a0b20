//! Brier score, expected calibration error and reliability-curve data.
//!
//! ECE bins samples by confidence (the maximum class probability) into `M`
//! equal-width bins. Bin `m` covers `((m-1)/M, m/M]`; a confidence of exactly
//! zero lands in the first bin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EvaluationSet;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
    /// `None` for an empty bin.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetrics {
    pub ece: f64,
    pub brier: f64,
    pub bins: Vec<BinStat>,
}

/// ECE together with the per-bin statistics it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCalibration {
    pub ece: f64,
    pub bins: Vec<BinStat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityPoint {
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Upper edge of bin `m` (0-based) out of `bins`.
fn edge(m: usize, bins: usize) -> f64 {
    m as f64 / bins as f64
}

/// Index of the right-closed bin containing `confidence`.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    if confidence <= 0.0 {
        return 0;
    }
    let mut idx = ((confidence * bins as f64).ceil() as usize).clamp(1, bins) - 1;
    // The product can land one ulp off an edge; settle against the exact edges.
    while idx > 0 && confidence <= edge(idx, bins) {
        idx -= 1;
    }
    while idx + 1 < bins && confidence > edge(idx + 1, bins) {
        idx += 1;
    }
    idx
}

fn require_nonempty(set: &EvaluationSet) -> Result<()> {
    if set.is_empty() {
        Err(Error::Empty(format!("evaluation set {:?}", set.name())))
    } else {
        Ok(())
    }
}

/// Mean squared error between the positive-class probability and the 0/1
/// positive indicator.
pub fn brier_score(set: &EvaluationSet) -> Result<f64> {
    require_nonempty(set)?;
    let pos = set.positive_class();
    let mut sum = 0.0;
    for r in set.records() {
        let truth = r.true_label.ok_or_else(|| Error::MissingLabel(r.sample_id.clone()))?;
        let y = if truth == pos { 1.0 } else { 0.0 };
        let d = r.probs.get(pos) - y;
        sum += d * d;
    }
    Ok(sum / set.len() as f64)
}

pub fn expected_calibration_error(set: &EvaluationSet, bins: usize) -> Result<BinnedCalibration> {
    require_nonempty(set)?;
    if bins == 0 {
        return Err(Error::InvalidParameter("bin count must be at least 1".into()));
    }
    let mut count = vec![0u64; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut correct = vec![0u64; bins];
    for r in set.records() {
        let ok = r.is_correct().ok_or_else(|| Error::MissingLabel(r.sample_id.clone()))?;
        let c = r.probs.confidence();
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        correct[b] += u64::from(ok);
    }
    let n = set.len() as f64;
    let mut ece = 0.0;
    let stats = (0..bins)
        .map(|m| {
            let (mean_confidence, accuracy) = if count[m] > 0 {
                let conf = conf_sum[m] / count[m] as f64;
                let acc = correct[m] as f64 / count[m] as f64;
                ece += count[m] as f64 / n * (acc - conf).abs();
                (Some(conf), Some(acc))
            } else {
                (None, None)
            };
            BinStat {
                lower: edge(m, bins),
                upper: edge(m + 1, bins),
                count: count[m],
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(BinnedCalibration {
        ece: ece.clamp(0.0, 1.0),
        bins: stats,
    })
}

pub fn calibration_metrics(set: &EvaluationSet, bins: usize) -> Result<CalibrationMetrics> {
    let binned = expected_calibration_error(set, bins)?;
    Ok(CalibrationMetrics {
        ece: binned.ece,
        brier: brier_score(set)?,
        bins: binned.bins,
    })
}

/// One `(mean_confidence, accuracy)` point per non-empty bin, in bin order.
/// The ideal curve is `y = x`.
pub fn reliability_curve(set: &EvaluationSet, bins: usize) -> Result<Vec<ReliabilityPoint>> {
    Ok(points_from_bins(&expected_calibration_error(set, bins)?.bins))
}

pub fn points_from_bins(bins: &[BinStat]) -> Vec<ReliabilityPoint> {
    bins.iter()
        .filter_map(|b| {
            Some(ReliabilityPoint {
                mean_confidence: b.mean_confidence?,
                accuracy: b.accuracy?,
            })
        })
        .collect()
}

/// `bin_lower,bin_upper,count,mean_confidence,accuracy`; empty bins leave the
/// last two fields blank.
pub fn reliability_csv(bins: &[BinStat]) -> String {
    let mut out = String::from("bin_lower,bin_upper,count,mean_confidence,accuracy\n");
    for b in bins {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.lower,
            b.upper,
            b.count,
            opt(b.mean_confidence),
            opt(b.accuracy)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ClassProbabilities, PredictionRecord, Role};

    /// `(p_melanoma, truth_is_melanoma)`
    fn binary(rows: &[(f64, bool)]) -> EvaluationSet {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, &(p, y))| {
                PredictionRecord::new(
                    format!("r{i}"),
                    Some(if y { 0 } else { 1 }),
                    ClassProbabilities::new(vec![p, 1.0 - p]).unwrap(),
                )
            })
            .collect();
        EvaluationSet::new("c", vec!["Melanoma".into(), "NonMelanoma".into()], 0, records, Role::Test).unwrap()
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier_score(&binary(&[(1.0, true), (0.0, false)])).unwrap(), 0.0);
        assert_eq!(brier_score(&binary(&[(0.5, true), (0.5, false), (0.5, false)])).unwrap(), 0.25);
        let b = brier_score(&binary(&[(0.8, true), (0.3, false)])).unwrap();
        assert!((b - 0.065).abs() < 1e-12);
    }

    #[test]
    fn ece_single_record() {
        let c = expected_calibration_error(&binary(&[(0.7, true)]), 10).unwrap();
        assert!((c.ece - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ece_two_bins() {
        // Two at 0.95 (both correct), two at 0.55 (one correct).
        let set = binary(&[(0.95, true), (0.95, true), (0.55, true), (0.55, false)]);
        let c = expected_calibration_error(&set, 10).unwrap();
        assert!((c.ece - 0.05).abs() < 1e-12);
        let pts = points_from_bins(&c.bins);
        assert_eq!(pts.len(), 2);
        assert!((pts[0].mean_confidence - 0.55).abs() < 1e-12 && pts[0].accuracy == 0.5);
        assert!((pts[1].mean_confidence - 0.95).abs() < 1e-12 && pts[1].accuracy == 1.0);
    }

    #[test]
    fn confident_and_correct_is_perfect() {
        let set = binary(&[(1.0, true), (0.0, false)]);
        let c = expected_calibration_error(&set, 10).unwrap();
        assert_eq!(c.ece, 0.0);
        let pts = reliability_curve(&set, 10).unwrap();
        assert_eq!(pts, vec![ReliabilityPoint { mean_confidence: 1.0, accuracy: 1.0 }]);
    }

    #[test]
    fn edges_are_right_closed() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.10000000000000002, 10), 1);
        for m in 1..=10 {
            let e = m as f64 / 10.0;
            assert_eq!(bin_index(e, 10), m - 1, "edge {e}");
        }
        for (lit, m) in [(0.3, 2), (0.6, 5), (0.7, 6), (0.9, 8), (1.0, 9)] {
            assert_eq!(bin_index(lit, 10), m);
        }
        assert_eq!(bin_index(0.5, 1), 0);
    }

    #[test]
    fn empty_set_is_an_error() {
        let empty = EvaluationSet::new("e", vec!["a".into(), "b".into()], 0, vec![], Role::Test).unwrap();
        assert!(brier_score(&empty).is_err());
        assert!(expected_calibration_error(&empty, 10).is_err());
    }

    #[test]
    fn csv_export_lists_every_bin() {
        let set = binary(&[(0.95, true), (0.55, false)]);
        let c = expected_calibration_error(&set, 10).unwrap();
        let csv = reliability_csv(&c.bins);
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.lines().nth(1).unwrap().ends_with(",0,,"));
    }
}
