//! Entropy-threshold rejection.
//!
//! A record is rejected into the "Uncertain" class when its normalized entropy
//! is strictly greater than the threshold. The threshold is tuned on a
//! validation set by sweeping a grid over `[0, 1]` and minimizing the mean of
//! ECE and Brier score on the accepted subset, subject to a cap on the
//! rejected fraction. The chosen threshold is then applied unchanged to test
//! data.

use serde::{Deserialize, Serialize};

use crate::calibration::{self, CalibrationMetrics};
use crate::error::{Error, Result};
use crate::exec;
use crate::ingest::{EvaluationSet, PredictionRecord};
use crate::metrics::{self, ClassificationMetrics, ConfusionCounts};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionPolicy {
    pub threshold: f64,
    pub max_reject_fraction: f64,
    pub grid_step: f64,
    pub bins: usize,
}

impl Default for RejectionPolicy {
    fn default() -> Self {
        RejectionPolicy {
            threshold: 1.0,
            max_reject_fraction: 0.20,
            grid_step: 0.01,
            bins: calibration::DEFAULT_BINS,
        }
    }
}

impl RejectionPolicy {
    pub fn with_threshold(self, threshold: f64) -> Self {
        RejectionPolicy { threshold, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidParameter(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.max_reject_fraction) {
            return Err(Error::InvalidParameter(format!(
                "max_reject_fraction {} outside [0, 1]",
                self.max_reject_fraction
            )));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 1.0) {
            return Err(Error::InvalidParameter(format!("grid_step {} must be in (0, 1]", self.grid_step)));
        }
        if self.bins == 0 {
            return Err(Error::InvalidParameter("bins must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub accepted: usize,
    pub reject_fraction: f64,
    pub accuracy: Option<f64>,
    pub ece: Option<f64>,
    pub brier: Option<f64>,
    /// `(ece + brier) / 2` on the accepted subset.
    pub objective: Option<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedSet {
    pub accepted: EvaluationSet,
    /// The "Uncertain" class.
    pub rejected: EvaluationSet,
}

impl PartitionedSet {
    pub fn coverage(&self) -> f64 {
        let n = self.accepted.len() + self.rejected.len();
        if n == 0 {
            0.0
        } else {
            self.accepted.len() as f64 / n as f64
        }
    }
}

fn entropy_of(r: &PredictionRecord) -> Result<f64> {
    r.entropy.ok_or_else(|| Error::NotAnnotated(r.sample_id.clone()))
}

/// Split an annotated set at threshold `t`: entropy `> t` is rejected.
pub fn apply_threshold(set: &EvaluationSet, t: f64) -> Result<PartitionedSet> {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for r in set.records() {
        if entropy_of(r)? > t {
            rejected.push(r.clone());
        } else {
            accepted.push(r.clone());
        }
    }
    Ok(PartitionedSet {
        accepted: set.with_records(accepted),
        rejected: set.with_records(rejected),
    })
}

/// Thresholds `0, step, 2 step, ..., 1`. When `1/step` is (nearly) an integer
/// `K`, the grid is `k / K` so values such as `0.07` come out exact.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidParameter(format!("grid_step {step} must be in (0, 1]")));
    }
    let k = (1.0 / step).round();
    if (k * step - 1.0).abs() < 1e-9 {
        let k = k as usize;
        return Ok((0..=k).map(|i| i as f64 / k as f64).collect());
    }
    let mut grid: Vec<f64> = (0..)
        .map(|i| i as f64 * step)
        .take_while(|&t| t < 1.0 - 1e-12)
        .collect();
    grid.push(1.0);
    Ok(grid)
}

fn sweep_point(val: &EvaluationSet, t: f64, policy: &RejectionPolicy) -> SweepPoint {
    let accepted: Vec<PredictionRecord> = val
        .records()
        .iter()
        .filter(|r| r.entropy.is_some_and(|h| h <= t))
        .cloned()
        .collect();
    let n = val.len();
    let reject_fraction = if n == 0 {
        0.0
    } else {
        (n - accepted.len()) as f64 / n as f64
    };
    let kept = accepted.len();
    let subset = val.with_records(accepted);
    let counts = subset.class_counts();
    let single_class = counts.iter().filter(|&&c| c > 0).count() < 2;

    let (accuracy, ece, brier) = if kept == 0 {
        (None, None, None)
    } else {
        let correct = subset.records().iter().filter(|r| r.is_correct() == Some(true)).count();
        let ece = calibration::expected_calibration_error(&subset, policy.bins).ok().map(|c| c.ece);
        let brier = calibration::brier_score(&subset).ok();
        (Some(correct as f64 / kept as f64), ece, brier)
    };
    let objective = match (ece, brier) {
        (Some(e), Some(b)) => Some((e + b) / 2.0),
        _ => None,
    };
    let feasible = kept > 0 && !single_class && reject_fraction <= policy.max_reject_fraction && objective.is_some();
    SweepPoint {
        threshold: t,
        accepted: kept,
        reject_fraction,
        accuracy,
        ece,
        brier,
        objective,
        feasible,
    }
}

fn check_sweep_input(val: &EvaluationSet, policy: &RejectionPolicy) -> Result<Vec<f64>> {
    val.require_labeled()?;
    val.require_annotated()?;
    if val.is_empty() {
        return Err(Error::Empty(format!("validation set {:?}", val.name())));
    }
    policy.validate()?;
    threshold_grid(policy.grid_step)
}

/// Evaluate every grid threshold on an annotated, labeled validation set.
/// Points are returned in increasing threshold order; with the `parallel`
/// feature they are computed concurrently.
pub fn sweep_thresholds(val: &EvaluationSet, policy: &RejectionPolicy) -> Result<Vec<SweepPoint>> {
    let grid = check_sweep_input(val, policy)?;
    Ok(exec::map_range(grid.len(), |i| sweep_point(val, grid[i], policy)))
}

/// Single-threaded sweep; same output as [`sweep_thresholds`].
pub fn sweep_thresholds_sequential(val: &EvaluationSet, policy: &RejectionPolicy) -> Result<Vec<SweepPoint>> {
    let grid = check_sweep_input(val, policy)?;
    Ok(grid.iter().map(|&t| sweep_point(val, t, policy)).collect())
}

/// The feasible point with the smallest objective; ties go to the smaller
/// reject fraction, then the smaller threshold.
pub fn best_point(sweep: &[SweepPoint]) -> Result<&SweepPoint> {
    sweep
        .iter()
        .filter(|p| p.feasible)
        .filter_map(|p| p.objective.map(|o| (o, p)))
        .min_by(|(oa, a), (ob, b)| {
            oa.total_cmp(ob)
                .then(a.reject_fraction.total_cmp(&b.reject_fraction))
                .then(a.threshold.total_cmp(&b.threshold))
        })
        .map(|(_, p)| p)
        .ok_or(Error::NoAdmissibleThreshold)
}

/// `base` with its threshold replaced by the best feasible sweep point.
pub fn select_threshold(sweep: &[SweepPoint], base: &RejectionPolicy) -> Result<RejectionPolicy> {
    best_point(sweep).map(|p| base.with_threshold(p.threshold))
}

/// Everything measured on one labeled set (or subset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetrics {
    pub n: usize,
    pub confusion: ConfusionCounts,
    pub classification: ClassificationMetrics,
    pub calibration: CalibrationMetrics,
}

impl EvaluationMetrics {
    pub fn compute(set: &EvaluationSet, bins: usize) -> Result<Self> {
        let (confusion, classification) = metrics::evaluate_classification(set)?;
        Ok(EvaluationMetrics {
            n: set.len(),
            confusion,
            classification,
            calibration: calibration::calibration_metrics(set, bins)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetStatus {
    Ok,
    /// Nothing was accepted; after-metrics are undefined.
    Empty,
    /// Accepted records hold one class only; AUC is undefined.
    SingleClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionEvaluation {
    pub policy: RejectionPolicy,
    pub before: EvaluationMetrics,
    pub after: Option<EvaluationMetrics>,
    pub after_status: SubsetStatus,
    pub partition: PartitionedSet,
}

/// Serializable view of a [`RejectionEvaluation`] without the record lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub threshold: f64,
    pub n: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub coverage: f64,
    pub before: EvaluationMetrics,
    pub after: Option<EvaluationMetrics>,
    pub after_status: SubsetStatus,
}

impl RejectionEvaluation {
    pub fn summary(&self) -> RejectionSummary {
        RejectionSummary {
            threshold: self.policy.threshold,
            n: self.before.n,
            accepted: self.partition.accepted.len(),
            rejected: self.partition.rejected.len(),
            coverage: self.partition.coverage(),
            before: self.before.clone(),
            after: self.after.clone(),
            after_status: self.after_status,
        }
    }
}

/// Metrics on the full labeled set and on the subset accepted by `policy`.
/// Rejected records take no part in any after-metric.
pub fn evaluate_with_rejection(test: &EvaluationSet, policy: &RejectionPolicy) -> Result<RejectionEvaluation> {
    policy.validate()?;
    test.require_labeled()?;
    let before = EvaluationMetrics::compute(test, policy.bins)?;
    let partition = apply_threshold(test, policy.threshold)?;
    let accepted = &partition.accepted;
    let (after, after_status) = if accepted.is_empty() {
        (None, SubsetStatus::Empty)
    } else {
        let status = if accepted.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
            SubsetStatus::SingleClass
        } else {
            SubsetStatus::Ok
        };
        (Some(EvaluationMetrics::compute(accepted, policy.bins)?), status)
    };
    Ok(RejectionEvaluation {
        policy: *policy,
        before,
        after,
        after_status,
        partition,
    })
}

/// `threshold,reject_fraction,accuracy,ece,brier,objective,feasible`
pub fn sweep_csv(sweep: &[SweepPoint]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("threshold,reject_fraction,accuracy,ece,brier,objective,feasible\n");
    for p in sweep {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.threshold,
            p.reject_fraction,
            opt(p.accuracy),
            opt(p.ece),
            opt(p.brier),
            opt(p.objective),
            p.feasible
        ));
    }
    out
}
