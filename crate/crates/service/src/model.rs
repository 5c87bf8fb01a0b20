use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use melreject_core::calibration::{points_from_bins, BinStat, ReliabilityPoint};
use melreject_core::ingest::{
    parse_predictions, set_from_json_value, BinaryLabel, ClassProbabilities, ParseOptions, PredictionFormat, Role,
};
use melreject_core::rejection::{EvaluationMetrics, RejectionPolicy, RejectionSummary, SubsetStatus, SweepPoint};
use melreject_core::report::RowMeta;
use melreject_core::{EvaluationSet, PredictionRecord, Result};

/// A prediction file inline: CSV text, or the JSON prediction document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Csv(String),
    Json(Value),
}

impl Payload {
    pub fn parse(self, name: &str, role: Role, positive_class: Option<&str>) -> Result<EvaluationSet> {
        let opts = ParseOptions {
            name: name.to_string(),
            role,
            positive_class: positive_class.map(str::to_string),
        };
        match self {
            Payload::Csv(text) => parse_predictions(text.as_bytes(), PredictionFormat::Csv, &opts),
            Payload::Json(value) => set_from_json_value(value, &opts),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyOverrides {
    pub grid_step: Option<f64>,
    pub max_reject_fraction: Option<f64>,
    pub bins: Option<usize>,
}

impl PolicyOverrides {
    pub fn apply(self, base: RejectionPolicy) -> RejectionPolicy {
        RejectionPolicy {
            grid_step: self.grid_step.unwrap_or(base.grid_step),
            max_reject_fraction: self.max_reject_fraction.unwrap_or(base.max_reject_fraction),
            bins: self.bins.unwrap_or(base.bins),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRunRequest {
    pub validation: Payload,
    pub test: Payload,
    #[serde(default)]
    pub policy: PolicyOverrides,
    #[serde(default)]
    pub meta: Option<RowMeta>,
    /// Positive class name, needed when no class is called "melanoma".
    #[serde(default)]
    pub positive_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub sample_id: String,
    pub human_label: BinaryLabel,
    pub reviewer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub run_id: String,
    pub sample_id: String,
    pub human_label: BinaryLabel,
    pub reviewer: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ready,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    pub run_id: String,
    pub created: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub meta: RowMeta,
    /// Policy with the selected threshold.
    pub policy: Option<RejectionPolicy>,
    pub validation_records: usize,
    pub test_records: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub reviewed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub run_id: String,
    /// True when the run's stored threshold was used.
    pub selected: bool,
    #[serde(flatten)]
    pub summary: RejectionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub run_id: String,
    pub selected_threshold: f64,
    pub max_reject_fraction: f64,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilitySide {
    pub ece: f64,
    pub brier: f64,
    pub bins: Vec<BinStat>,
    pub points: Vec<ReliabilityPoint>,
}

impl ReliabilitySide {
    pub fn from_metrics(m: &EvaluationMetrics) -> Self {
        ReliabilitySide {
            ece: m.calibration.ece,
            brier: m.calibration.brier,
            bins: m.calibration.bins.clone(),
            points: points_from_bins(&m.calibration.bins),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDocument {
    pub run_id: String,
    pub threshold: f64,
    pub before: ReliabilitySide,
    pub after: Option<ReliabilitySide>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainItem {
    pub sample_id: String,
    pub entropy: f64,
    pub probs: Vec<f64>,
    pub predicted: String,
    pub review: Option<ReviewRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainPage {
    pub run_id: String,
    pub threshold: f64,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub pages: usize,
    pub items: Vec<UncertainItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub run_id: String,
    pub threshold: f64,
    pub n: usize,
    pub accepted: usize,
    pub reviewed: usize,
    /// Rejected records still awaiting review.
    pub pending: usize,
    /// `(accepted + reviewed) / n`.
    pub coverage: f64,
    pub status: SubsetStatus,
    pub metrics: Option<EvaluationMetrics>,
}

/// Records with entropy above `t`, most uncertain first; ties keep input order.
pub fn uncertain_records(test: &EvaluationSet, t: f64) -> Vec<&PredictionRecord> {
    let mut out: Vec<&PredictionRecord> = test
        .records()
        .iter()
        .filter(|r| r.entropy.is_some_and(|h| h > t))
        .collect();
    out.sort_by(|a, b| b.entropy.unwrap().total_cmp(&a.entropy.unwrap()));
    out
}

pub fn uncertain_page(
    run_id: &str,
    test: &EvaluationSet,
    t: f64,
    page: usize,
    page_size: usize,
    reviews: &BTreeMap<String, ReviewRecord>,
) -> UncertainPage {
    let all = uncertain_records(test, t);
    let total = all.len();
    let items = all
        .into_iter()
        .skip((page - 1).saturating_mul(page_size))
        .take(page_size)
        .map(|r| UncertainItem {
            sample_id: r.sample_id.clone(),
            entropy: r.entropy.unwrap(),
            probs: r.probs.as_slice().to_vec(),
            predicted: test.class_names()[r.predicted()].clone(),
            review: reviews.get(&r.sample_id).cloned(),
        })
        .collect();
    UncertainPage {
        run_id: run_id.to_string(),
        threshold: t,
        total,
        page,
        page_size,
        pages: total.div_ceil(page_size),
        items,
    }
}

/// Class index a human verdict maps to in `set`.
fn verdict_class(set: &EvaluationSet, label: BinaryLabel) -> usize {
    let pos = set.positive_class();
    match label {
        BinaryLabel::Melanoma => pos,
        BinaryLabel::NonMelanoma => (0..set.class_names().len()).find(|&c| c != pos).expect("at least two classes"),
    }
}

/// Metrics over accepted records (model predictions) plus reviewed rejected
/// records, whose verdict stands in as a one-hot prediction. Unreviewed
/// rejected records are left out.
pub fn final_metrics(
    run_id: &str,
    test: &EvaluationSet,
    policy: &RejectionPolicy,
    reviews: &BTreeMap<String, ReviewRecord>,
) -> Result<FinalMetrics> {
    let t = policy.threshold;
    let k = test.class_names().len();
    let mut records = Vec::new();
    let (mut accepted, mut reviewed, mut pending) = (0, 0, 0);
    for r in test.records() {
        let h = r.entropy.ok_or_else(|| melreject_core::Error::NotAnnotated(r.sample_id.clone()))?;
        if h <= t {
            accepted += 1;
            records.push(r.clone());
        } else if let Some(review) = reviews.get(&r.sample_id) {
            reviewed += 1;
            let mut one_hot = vec![0.0; k];
            one_hot[verdict_class(test, review.human_label)] = 1.0;
            let probs = ClassProbabilities::new(one_hot).expect("one-hot vector is a distribution");
            records.push(PredictionRecord {
                probs,
                entropy: Some(0.0),
                ..r.clone()
            });
        } else {
            pending += 1;
        }
    }
    let n = test.len();
    let kept = EvaluationSet::new(test.name(), test.class_names().to_vec(), test.positive_class(), records, test.role())?;
    let (status, metrics) = if kept.is_empty() {
        (SubsetStatus::Empty, None)
    } else {
        let status = if kept.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
            SubsetStatus::SingleClass
        } else {
            SubsetStatus::Ok
        };
        (status, Some(EvaluationMetrics::compute(&kept, policy.bins)?))
    };
    Ok(FinalMetrics {
        run_id: run_id.to_string(),
        threshold: t,
        n,
        accepted,
        reviewed,
        pending,
        coverage: if n == 0 { 0.0 } else { (accepted + reviewed) as f64 / n as f64 },
        status,
        metrics,
    })
}
