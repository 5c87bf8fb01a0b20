//! Before/after result rows, false-diagnosis counts and leaderboards.
//!
//! Percentages are rounded half-up to one decimal (`0.83849` renders as
//! `83.8%`); undefined metrics render as `—`. All number formatting is
//! locale-independent.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EvaluationSet;
use crate::metrics::{confusion_counts, ConfusionCounts};
use crate::rejection::{EvaluationMetrics, RejectionSummary};

pub const UNDEFINED: &str = "—";

/// `round(value * 1000) / 10` with one decimal and a percent sign.
pub fn format_percent(value: Option<f64>) -> String {
    match value {
        Some(v) if v.is_finite() => {
            // The nudge keeps decimal halves such as 0.8385 rounding up
            // despite binary representation error.
            let tenths = (v * 1000.0 + 1e-9).round() as i64;
            let sign = if tenths < 0 { "-" } else { "" };
            let t = tenths.abs();
            format!("{sign}{}.{}%", t / 10, t % 10)
        }
        _ => UNDEFINED.to_string(),
    }
}

/// Four decimals, as calibration scores are usually reported.
pub fn format_score(value: Option<f64>) -> String {
    match value {
        Some(v) if v.is_finite() => format!("{v:.4}"),
        _ => UNDEFINED.to_string(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub before: Option<f64>,
    pub after: Option<f64>,
}

impl MetricPair {
    fn get(&self, stage: Stage) -> Option<f64> {
        match stage {
            Stage::Before => self.before,
            Stage::After => self.after,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub test_set: String,
    pub network: String,
    pub train_sets: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeforeAfterRow {
    pub test_set: String,
    pub network: String,
    pub train_sets: String,
    pub precision: MetricPair,
    pub specificity: MetricPair,
    pub sensitivity: MetricPair,
    pub f1: MetricPair,
    pub accuracy: MetricPair,
    pub auc_roc: MetricPair,
    pub brier: MetricPair,
    pub ece: MetricPair,
    pub threshold: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Precision,
    Specificity,
    Sensitivity,
    F1,
    Accuracy,
    AucRoc,
    Brier,
    Ece,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Precision,
        Metric::Specificity,
        Metric::Sensitivity,
        Metric::F1,
        Metric::Accuracy,
        Metric::AucRoc,
        Metric::Brier,
        Metric::Ece,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Specificity => "specificity",
            Metric::Sensitivity => "sensitivity",
            Metric::F1 => "f1",
            Metric::Accuracy => "accuracy",
            Metric::AucRoc => "auc_roc",
            Metric::Brier => "brier",
            Metric::Ece => "ece",
        }
    }

    fn header(self) -> &'static str {
        match self {
            Metric::Precision => "Precision",
            Metric::Specificity => "Specificity",
            Metric::Sensitivity => "Sensitivity",
            Metric::F1 => "F-1",
            Metric::Accuracy => "Accuracy",
            Metric::AucRoc => "AUC-ROC",
            Metric::Brier => "Brier score",
            Metric::Ece => "ECE",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Brier | Metric::Ece)
    }

    fn render(self, v: Option<f64>) -> String {
        if self.higher_is_better() {
            format_percent(v)
        } else {
            format_score(v)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Before,
    After,
}

/// A metric at one stage, written `precision` (before) or `precision_after`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetricKey {
    pub metric: Metric,
    pub stage: Stage,
}

impl fmt::Display for MetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = match self.stage {
            Stage::Before => "before",
            Stage::After => "after",
        };
        write!(f, "{}_{suffix}", self.metric.name())
    }
}

impl FromStr for MetricKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('-', "_");
        let (name, stage) = if let Some(n) = lower.strip_suffix("_after") {
            (n, Stage::After)
        } else if let Some(n) = lower.strip_suffix("_before") {
            (n, Stage::Before)
        } else {
            (lower.as_str(), Stage::Before)
        };
        let name = match name {
            "auc" | "auroc" => "auc_roc",
            "f_1" => "f1",
            other => other,
        };
        Metric::ALL
            .iter()
            .find(|m| m.name() == name)
            .map(|&metric| MetricKey { metric, stage })
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

impl BeforeAfterRow {
    pub fn from_summary(meta: RowMeta, summary: &RejectionSummary) -> Self {
        let pick = |f: fn(&EvaluationMetrics) -> Option<f64>| MetricPair {
            before: f(&summary.before),
            after: summary.after.as_ref().and_then(f),
        };
        BeforeAfterRow {
            test_set: meta.test_set,
            network: meta.network,
            train_sets: meta.train_sets,
            precision: pick(|m| m.classification.precision),
            specificity: pick(|m| m.classification.specificity),
            sensitivity: pick(|m| m.classification.sensitivity),
            f1: pick(|m| m.classification.f1),
            accuracy: pick(|m| m.classification.accuracy),
            auc_roc: pick(|m| m.classification.auc_roc),
            brier: pick(|m| Some(m.calibration.brier)),
            ece: pick(|m| Some(m.calibration.ece)),
            threshold: summary.threshold,
            coverage: summary.coverage,
        }
    }

    pub fn pair(&self, metric: Metric) -> MetricPair {
        match metric {
            Metric::Precision => self.precision,
            Metric::Specificity => self.specificity,
            Metric::Sensitivity => self.sensitivity,
            Metric::F1 => self.f1,
            Metric::Accuracy => self.accuracy,
            Metric::AucRoc => self.auc_roc,
            Metric::Brier => self.brier,
            Metric::Ece => self.ece,
        }
    }

    pub fn value(&self, key: MetricKey) -> Option<f64> {
        self.pair(key.metric).get(key.stage)
    }

    /// `"83.8% / 85.3%"`
    pub fn cell(&self, metric: Metric) -> String {
        let p = self.pair(metric);
        format!("{} / {}", metric.render(p.before), metric.render(p.after))
    }
}

/// Columns of the classification table.
pub const CLASSIFICATION_COLUMNS: [Metric; 6] = [
    Metric::Precision,
    Metric::Specificity,
    Metric::Sensitivity,
    Metric::F1,
    Metric::Accuracy,
    Metric::AucRoc,
];

/// Columns of the calibration table.
pub const CALIBRATION_COLUMNS: [Metric; 2] = [Metric::Brier, Metric::Ece];

/// Aligned plain-text table with `before / after` cells.
pub fn render_text(rows: &[BeforeAfterRow], columns: &[Metric]) -> String {
    let mut header: Vec<String> = vec!["Test set".into(), "Network".into(), "Train sets".into()];
    header.extend(columns.iter().map(|m| m.header().to_string()));
    header.push("Threshold".into());
    let mut table = vec![header];
    for r in rows {
        let mut line = vec![r.test_set.clone(), r.network.clone(), r.train_sets.clone()];
        line.extend(columns.iter().map(|&m| r.cell(m)));
        line.push(r.threshold.to_string());
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in table.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(rule));
            out.push('\n');
        }
    }
    out
}

/// CSV with one rendered `before`/`after` column per metric.
pub fn render_csv(rows: &[BeforeAfterRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["test_set".to_string(), "network".into(), "train_sets".into()];
    for m in Metric::ALL {
        header.push(format!("{}_before", m.name()));
        header.push(format!("{}_after", m.name()));
    }
    header.push("threshold".into());
    header.push("coverage".into());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec = vec![r.test_set.clone(), r.network.clone(), r.train_sets.clone()];
        for m in Metric::ALL {
            let p = r.pair(m);
            rec.push(m.render(p.before));
            rec.push(m.render(p.after));
        }
        rec.push(r.threshold.to_string());
        rec.push(format_percent(Some(r.coverage)));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// JSON document with the raw rows plus, per metric key, the indices of the
/// best rows (ties included).
pub fn render_json(rows: &[BeforeAfterRow]) -> String {
    let mut best = serde_json::Map::new();
    for metric in Metric::ALL {
        for stage in [Stage::Before, Stage::After] {
            let key = MetricKey { metric, stage };
            let values: Vec<(usize, f64)> = rows
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.value(key).map(|v| (i, v)))
                .collect();
            let target = values.iter().map(|&(_, v)| v).fold(None, |acc: Option<f64>, v| {
                Some(match acc {
                    None => v,
                    Some(a) if metric.higher_is_better() => a.max(v),
                    Some(a) => a.min(v),
                })
            });
            let idx: Vec<usize> = match target {
                Some(t) => values.iter().filter(|&&(_, v)| v == t).map(|&(i, _)| i).collect(),
                None => Vec::new(),
            };
            best.insert(key.to_string(), serde_json::json!(idx));
        }
    }
    let doc = serde_json::json!({ "rows": rows, "best": best });
    serde_json::to_string_pretty(&doc).expect("rows serialize")
}

/// Parse the `rows` of a [`render_json`] document, or a bare row / row array.
pub fn parse_rows_json(text: &str) -> Result<Vec<BeforeAfterRow>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let rows = match value {
        serde_json::Value::Object(mut obj) if obj.contains_key("rows") => obj.remove("rows").expect("checked"),
        serde_json::Value::Object(obj) => serde_json::Value::Array(vec![serde_json::Value::Object(obj)]),
        other => other,
    };
    Ok(serde_json::from_value(rows)?)
}

/// Stable sort on `key`, best first: descending for metrics where higher is
/// better, ascending for Brier and ECE. Undefined values go last.
pub fn rank_leaderboard(rows: &[BeforeAfterRow], key: MetricKey) -> Vec<BeforeAfterRow> {
    let mut ranked = rows.to_vec();
    let higher = key.metric.higher_is_better();
    ranked.sort_by(|a, b| match (a.value(key), b.value(key)) {
        (Some(x), Some(y)) if higher => y.total_cmp(&x),
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    });
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionSummary {
    pub fp_before: u64,
    pub fn_before: u64,
    pub fp_after: u64,
    pub fn_after: u64,
    /// Misdiagnoses removed by rejection. Signed; it is not guaranteed
    /// non-negative in general.
    pub prevented: i64,
}

impl ReductionSummary {
    pub fn from_counts(before: &ConfusionCounts, after: &ConfusionCounts) -> Self {
        ReductionSummary {
            fp_before: before.fp,
            fn_before: before.fn_,
            fp_after: after.fp,
            fn_after: after.fn_,
            prevented: before.errors() as i64 - after.errors() as i64,
        }
    }

    /// Fraction of false negatives removed, `None` without any.
    pub fn fn_reduction(&self) -> Option<f64> {
        (self.fn_before > 0).then(|| (self.fn_before as f64 - self.fn_after as f64) / self.fn_before as f64)
    }

    pub fn fp_reduction(&self) -> Option<f64> {
        (self.fp_before > 0).then(|| (self.fp_before as f64 - self.fp_after as f64) / self.fp_before as f64)
    }

    /// Fraction of all misdiagnoses removed.
    pub fn error_reduction(&self) -> Option<f64> {
        let before = self.fp_before + self.fn_before;
        (before > 0).then(|| self.prevented as f64 / before as f64)
    }
}

/// FP/FN counts on the full labeled set versus its accepted subset.
pub fn false_diagnosis_reduction(full: &EvaluationSet, accepted: &EvaluationSet) -> Result<ReductionSummary> {
    let before = confusion_counts(full)?;
    let after = if accepted.is_empty() {
        ConfusionCounts::default()
    } else {
        confusion_counts(accepted)?
    };
    Ok(ReductionSummary::from_counts(&before, &after))
}

/// `testset,fp_before,fn_before,fp_after,fn_after`
pub fn reduction_csv(rows: &[(String, ReductionSummary)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["testset", "fp_before", "fn_before", "fp_after", "fn_after"])
        .expect("in-memory write");
    for (name, s) in rows {
        w.write_record([
            name.clone(),
            s.fp_before.to_string(),
            s.fn_before.to_string(),
            s.fp_after.to_string(),
            s.fn_after.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

#[derive(Debug, Clone, Deserialize)]
struct RosterEntry {
    letter: char,
    name: String,
    aliases: Vec<String>,
}

fn roster() -> &'static [RosterEntry] {
    static ROSTER: OnceLock<Vec<RosterEntry>> = OnceLock::new();
    ROSTER.get_or_init(|| serde_json::from_str(include_str!("../data/roster.json")).expect("bundled roster parses"))
}

/// Letter for a training dataset name (or the letter itself).
pub fn roster_letter(name: &str) -> Option<char> {
    let lower = name.trim().to_lowercase();
    roster()
        .iter()
        .find(|e| {
            e.letter.to_string().eq_ignore_ascii_case(&lower)
                || e.name.to_lowercase() == lower
                || e.aliases.iter().any(|a| *a == lower)
        })
        .map(|e| e.letter)
}

pub fn roster_name(letter: char) -> Option<&'static str> {
    roster()
        .iter()
        .find(|e| e.letter == letter.to_ascii_uppercase())
        .map(|e| e.name.as_str())
}

/// Compact code such as `[A-E,G,I,J]`; runs of three or more letters collapse
/// into a range.
pub fn roster_code<S: AsRef<str>>(datasets: &[S]) -> Result<String> {
    let mut letters = Vec::with_capacity(datasets.len());
    for d in datasets {
        letters.push(
            roster_letter(d.as_ref())
                .ok_or_else(|| Error::InvalidParameter(format!("unknown training dataset {:?}", d.as_ref())))?,
        );
    }
    letters.sort_unstable();
    letters.dedup();
    let mut parts = Vec::new();
    let mut i = 0;
    while i < letters.len() {
        let mut j = i;
        while j + 1 < letters.len() && letters[j + 1] as u32 == letters[j] as u32 + 1 {
            j += 1;
        }
        if j - i >= 2 {
            parts.push(format!("{}-{}", letters[i], letters[j]));
        } else {
            parts.extend(letters[i..=j].iter().map(char::to_string));
        }
        i = j + 1;
    }
    Ok(format!("[{}]", parts.join(",")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_rendering() {
        assert_eq!(format_percent(Some(0.932)), "93.2%");
        assert_eq!(format_percent(Some(0.83849)), "83.8%");
        assert_eq!(format_percent(Some(0.8385)), "83.9%");
        assert_eq!(format_percent(Some(1.0)), "100.0%");
        assert_eq!(format_percent(Some(0.0)), "0.0%");
        assert_eq!(format_percent(Some(0.0005)), "0.1%");
        assert_eq!(format_percent(None), "—");
        assert_eq!(format_score(Some(0.13534)), "0.1353");
    }

    fn row(name: &str, precision: Option<f64>) -> BeforeAfterRow {
        BeforeAfterRow {
            test_set: "ISIC2017".into(),
            network: name.into(),
            train_sets: "[A-E]".into(),
            precision: MetricPair { before: precision, after: precision },
            specificity: MetricPair::default(),
            sensitivity: MetricPair::default(),
            f1: MetricPair::default(),
            accuracy: MetricPair::default(),
            auc_roc: MetricPair::default(),
            brier: MetricPair::default(),
            ece: MetricPair::default(),
            threshold: 0.1,
            coverage: 0.9,
        }
    }

    fn names(rows: &[BeforeAfterRow]) -> Vec<&str> {
        rows.iter().map(|r| r.network.as_str()).collect()
    }

    #[test]
    fn leaderboard_order() {
        let key: MetricKey = "precision".parse().unwrap();
        let rows = [row("b", Some(0.823)), row("a", Some(0.838)), row("c", Some(0.820))];
        assert_eq!(names(&rank_leaderboard(&rows, key)), ["a", "b", "c"]);
        assert_eq!(names(&rank_leaderboard(&rows[..1], key)), ["b"]);
        let ties = [row("x", Some(0.5)), row("none", None), row("y", Some(0.5))];
        assert_eq!(names(&rank_leaderboard(&ties, key)), ["x", "y", "none"]);
    }

    #[test]
    fn brier_ranks_ascending() {
        let mut a = row("a", None);
        a.brier.before = Some(0.2);
        let mut b = row("b", None);
        b.brier.before = Some(0.1);
        assert_eq!(names(&rank_leaderboard(&[a, b], "brier".parse().unwrap())), ["b", "a"]);
    }

    #[test]
    fn metric_keys() {
        let k: MetricKey = "AUC-ROC_after".parse().unwrap();
        assert_eq!(k, MetricKey { metric: Metric::AucRoc, stage: Stage::After });
        assert_eq!(k.to_string(), "auc_roc_after");
        assert!("recall".parse::<MetricKey>().is_err());
    }

    #[test]
    fn cells_and_text() {
        let r = row("DenseNet201", Some(0.838));
        assert_eq!(r.cell(Metric::Precision), "83.8% / 83.8%");
        assert_eq!(r.cell(Metric::Accuracy), "— / —");
        let text = render_text(&[r], &CLASSIFICATION_COLUMNS);
        assert!(text.lines().next().unwrap().starts_with("Test set"));
        assert!(text.contains("DenseNet201"));
    }

    #[test]
    fn json_rows_round_trip_and_mark_best() {
        let rows = vec![row("a", Some(0.7)), row("b", Some(0.9))];
        let text = render_json(&rows);
        assert_eq!(parse_rows_json(&text).unwrap(), rows);
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["best"]["precision_before"], serde_json::json!([1]));
    }

    #[test]
    fn roster_codes() {
        assert_eq!(
            roster_code(&["ISIC'16", "isic2017", "C", "D", "E", "G", "I", "J"]).unwrap(),
            "[A-E,G,I,J]"
        );
        assert_eq!(roster_code(&["A", "C", "D", "E"]).unwrap(), "[A,C-E]");
        assert_eq!(roster_code(&["isic2019"]).unwrap(), "[D]");
        assert_eq!(roster_name('h'), Some("PAD_UFES_20"));
        assert!(roster_code(&["unknown"]).is_err());
    }

    #[test]
    fn reduction_fractions() {
        let s = ReductionSummary::from_counts(
            &ConfusionCounts { tp: 0, fp: 10, tn: 0, fn_: 100 },
            &ConfusionCounts { tp: 0, fp: 10, tn: 0, fn_: 19 },
        );
        assert_eq!(s.prevented, 81);
        assert_eq!(s.fn_reduction(), Some(0.81));
        assert_eq!(s.fp_reduction(), Some(0.0));
    }
}
