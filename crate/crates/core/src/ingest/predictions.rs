//! Prediction files: per-sample class probabilities with optional ground truth.
//!
//! Two interchangeable encodings are supported:
//!
//! * CSV with header `sample_id,true_label,p_<class0>,p_<class1>[,...]`;
//!   an empty `true_label` marks an inference-only row.
//! * JSON object `{name?, role?, class_names, positive_class, records[]}`.
//!
//! Probability rows are validated, never renormalized.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum allowed deviation of a probability row's sum from 1.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Role::Train),
            "validation" | "val" => Ok(Role::Validation),
            "test" => Ok(Role::Test),
            other => Err(Error::InvalidParameter(format!("unknown role {other:?}"))),
        }
    }
}

/// A validated probability vector: every entry in `[0, 1]`, at least two
/// classes, and a sum within [`PROBABILITY_SUM_TOLERANCE`] of one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassProbabilities(Vec<f64>);

/// Why a probability vector was refused.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbabilityViolation {
    TooFewClasses(usize),
    OutOfRange { index: usize, value: f64 },
    Sum(f64),
}

impl fmt::Display for ProbabilityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbabilityViolation::TooFewClasses(n) => {
                write!(f, "need at least 2 class probabilities, got {n}")
            }
            ProbabilityViolation::OutOfRange { index, value } => {
                write!(f, "probability {value} at position {index} is outside [0, 1]")
            }
            ProbabilityViolation::Sum(sum) => write!(f, "probability sum {sum} exceeds tolerance"),
        }
    }
}

impl ClassProbabilities {
    pub fn new(values: Vec<f64>) -> std::result::Result<Self, ProbabilityViolation> {
        if values.len() < 2 {
            return Err(ProbabilityViolation::TooFewClasses(values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ProbabilityViolation::OutOfRange { index, value });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(ProbabilityViolation::Sum(sum));
        }
        Ok(ClassProbabilities(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Maximum class probability.
    pub fn confidence(&self) -> f64 {
        self.0[self.argmax()]
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }
}

impl TryFrom<Vec<f64>> for ClassProbabilities {
    type Error = String;

    fn try_from(values: Vec<f64>) -> std::result::Result<Self, String> {
        ClassProbabilities::new(values).map_err(|v| v.to_string())
    }
}

impl From<ClassProbabilities> for Vec<f64> {
    fn from(p: ClassProbabilities) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub true_label: Option<usize>,
    pub probs: ClassProbabilities,
    /// Normalized entropy, populated by [`crate::uncertainty::annotate_set`].
    pub entropy: Option<f64>,
}

impl PredictionRecord {
    pub fn new(sample_id: impl Into<String>, true_label: Option<usize>, probs: ClassProbabilities) -> Self {
        PredictionRecord {
            sample_id: sample_id.into(),
            true_label,
            probs,
            entropy: None,
        }
    }

    pub fn predicted(&self) -> usize {
        self.probs.argmax()
    }

    /// `Some(true)` when the prediction matches the ground truth.
    pub fn is_correct(&self) -> Option<bool> {
        self.true_label.map(|t| t == self.predicted())
    }
}

/// A named, validated collection of prediction records sharing one class
/// vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSet {
    name: String,
    class_names: Vec<String>,
    positive_class: usize,
    records: Vec<PredictionRecord>,
    role: Role,
}

impl EvaluationSet {
    pub fn new(
        name: impl Into<String>,
        class_names: Vec<String>,
        positive_class: usize,
        records: Vec<PredictionRecord>,
        role: Role,
    ) -> Result<Self> {
        let set = EvaluationSet {
            name: name.into(),
            class_names,
            positive_class,
            records,
            role,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let k = self.class_names.len();
        if k < 2 {
            return Err(Error::InvalidSet(format!("need at least 2 classes, got {k}")));
        }
        if self.positive_class >= k {
            return Err(Error::InvalidSet(format!(
                "positive class index {} out of range for {k} classes",
                self.positive_class
            )));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            let row = i + 1;
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateSample {
                    row,
                    sample_id: r.sample_id.clone(),
                });
            }
            if r.probs.len() != k {
                return Err(Error::InvalidProbabilities {
                    row,
                    reason: format!("expected {k} probabilities, got {}", r.probs.len()),
                });
            }
            if let Some(t) = r.true_label {
                if t >= k {
                    return Err(Error::InvalidSet(format!(
                        "record {:?} has label index {t} out of range",
                        r.sample_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn positive_class(&self) -> usize {
        self.positive_class
    }

    pub fn positive_class_name(&self) -> &str {
        &self.class_names[self.positive_class]
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Same vocabulary and metadata, different records. Records must come from
    /// a set with the same class count (they are not re-validated).
    pub(crate) fn with_records(&self, records: Vec<PredictionRecord>) -> Self {
        EvaluationSet {
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            positive_class: self.positive_class,
            records,
            role: self.role,
        }
    }

    pub(crate) fn records_mut(&mut self) -> &mut [PredictionRecord] {
        &mut self.records
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        resolve_class(&self.class_names, label)
    }

    /// Fails on the first record without a true label.
    pub fn require_labeled(&self) -> Result<()> {
        match self.records.iter().find(|r| r.true_label.is_none()) {
            Some(r) => Err(Error::MissingLabel(r.sample_id.clone())),
            None => Ok(()),
        }
    }

    /// Fails on the first record without an entropy annotation.
    pub fn require_annotated(&self) -> Result<()> {
        match self.records.iter().find(|r| r.entropy.is_none()) {
            Some(r) => Err(Error::NotAnnotated(r.sample_id.clone())),
            None => Ok(()),
        }
    }

    /// Probability assigned to the positive class, per record.
    pub fn positive_scores(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.probs.get(self.positive_class))
            .collect()
    }

    pub fn is_positive(&self, record: &PredictionRecord) -> Option<bool> {
        record.true_label.map(|t| t == self.positive_class)
    }

    /// Count of labeled records per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for r in &self.records {
            if let Some(t) = r.true_label {
                counts[t] += 1;
            }
        }
        counts
    }
}

fn resolve_class(class_names: &[String], label: &str) -> Option<usize> {
    class_names
        .iter()
        .position(|c| c == label)
        .or_else(|| class_names.iter().position(|c| c.eq_ignore_ascii_case(label)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionFormat {
    Csv,
    Json,
}

impl PredictionFormat {
    /// Guess from a file extension (`.csv` or `.json`).
    pub fn from_path(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(PredictionFormat::Csv),
            "json" => Some(PredictionFormat::Json),
            _ => None,
        }
    }
}

impl FromStr for PredictionFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(PredictionFormat::Csv),
            "json" => Ok(PredictionFormat::Json),
            other => Err(Error::InvalidParameter(format!("unknown prediction format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub name: String,
    pub role: Role,
    /// Positive class name. When unset, JSON files use their own
    /// `positive_class` field and CSV files look for a class named
    /// "melanoma" (case-insensitive).
    pub positive_class: Option<String>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            name: "predictions".to_string(),
            role: Role::Test,
            positive_class: None,
        }
    }
}

/// Parse a prediction file into a validated [`EvaluationSet`].
pub fn parse_predictions(bytes: &[u8], format: PredictionFormat, opts: &ParseOptions) -> Result<EvaluationSet> {
    match format {
        PredictionFormat::Csv => parse_csv(bytes, opts),
        PredictionFormat::Json => parse_json(bytes, opts),
    }
}

fn default_positive(class_names: &[String], wanted: Option<&str>) -> Result<usize> {
    match wanted {
        Some(name) => resolve_class(class_names, name)
            .ok_or_else(|| Error::InvalidSet(format!("positive class {name:?} is not one of {class_names:?}"))),
        None => class_names
            .iter()
            .position(|c| c.eq_ignore_ascii_case("melanoma"))
            .ok_or_else(|| {
                Error::InvalidSet(format!(
                    "cannot infer the positive class from {class_names:?}; name it explicitly"
                ))
            }),
    }
}

fn parse_csv(bytes: &[u8], opts: &ParseOptions) -> Result<EvaluationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .clone();
    if header.len() < 4 {
        return Err(Error::MalformedHeader(format!(
            "expected sample_id,true_label and at least two p_<class> columns, got {} columns",
            header.len()
        )));
    }
    if &header[0] != "sample_id" || &header[1] != "true_label" {
        return Err(Error::MalformedHeader(format!(
            "first columns must be sample_id,true_label, got {},{}",
            &header[0], &header[1]
        )));
    }
    let mut class_names = Vec::with_capacity(header.len() - 2);
    for col in header.iter().skip(2) {
        match col.strip_prefix("p_") {
            Some(name) if !name.is_empty() => class_names.push(name.to_string()),
            _ => return Err(Error::MalformedHeader(format!("column {col:?} is not p_<class>"))),
        }
    }
    let positive = default_positive(&class_names, opts.positive_class.as_deref())?;

    let k = class_names.len();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::MalformedRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        if row.len() != k + 2 {
            return Err(Error::MalformedRow {
                row: row_no,
                reason: format!("expected {} fields, got {}", k + 2, row.len()),
            });
        }
        let sample_id = row[0].to_string();
        if sample_id.is_empty() {
            return Err(Error::MalformedRow {
                row: row_no,
                reason: "empty sample_id".into(),
            });
        }
        if !seen.insert(sample_id.clone()) {
            return Err(Error::DuplicateSample { row: row_no, sample_id });
        }
        let true_label = match &row[1] {
            "" => None,
            label => Some(resolve_class(&class_names, label).ok_or_else(|| Error::UnknownLabel {
                row: row_no,
                label: label.to_string(),
            })?),
        };
        let mut values = Vec::with_capacity(k);
        for field in row.iter().skip(2) {
            let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
                row: row_no,
                reason: format!("probability {field:?} is not a number"),
            })?;
            values.push(v);
        }
        let probs = probabilities_at(values, row_no)?;
        records.push(PredictionRecord::new(sample_id, true_label, probs));
    }
    EvaluationSet::new(opts.name.clone(), class_names, positive, records, opts.role)
}

fn probabilities_at(values: Vec<f64>, row: usize) -> Result<ClassProbabilities> {
    ClassProbabilities::new(values).map_err(|v| match v {
        ProbabilityViolation::Sum(sum) => Error::ProbabilitySum { row, sum },
        other => Error::InvalidProbabilities {
            row,
            reason: other.to_string(),
        },
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ClassRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    sample_id: String,
    #[serde(default)]
    true_label: Option<String>,
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entropy: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonPredictions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<Role>,
    class_names: Vec<String>,
    positive_class: ClassRef,
    records: Vec<JsonRecord>,
}

fn parse_json(bytes: &[u8], opts: &ParseOptions) -> Result<EvaluationSet> {
    let file: JsonPredictions = serde_json::from_slice(bytes)?;
    from_json_value(file, opts)
}

/// Build a set from an already-decoded JSON prediction document.
pub fn set_from_json_value(value: serde_json::Value, opts: &ParseOptions) -> Result<EvaluationSet> {
    let file: JsonPredictions = serde_json::from_value(value)?;
    from_json_value(file, opts)
}

fn from_json_value(file: JsonPredictions, opts: &ParseOptions) -> Result<EvaluationSet> {
    let class_names = file.class_names;
    if class_names.len() < 2 {
        return Err(Error::MalformedHeader(format!(
            "class_names needs at least two entries, got {}",
            class_names.len()
        )));
    }
    let positive = match (&opts.positive_class, file.positive_class) {
        (Some(name), _) => default_positive(&class_names, Some(name))?,
        (None, ClassRef::Index(i)) => i,
        (None, ClassRef::Name(name)) => default_positive(&class_names, Some(&name))?,
    };
    let mut records = Vec::with_capacity(file.records.len());
    let mut seen = HashSet::new();
    for (i, r) in file.records.into_iter().enumerate() {
        let row = i + 1;
        if !seen.insert(r.sample_id.clone()) {
            return Err(Error::DuplicateSample {
                row,
                sample_id: r.sample_id,
            });
        }
        let true_label = match r.true_label.as_deref() {
            None | Some("") => None,
            Some(label) => Some(resolve_class(&class_names, label).ok_or_else(|| Error::UnknownLabel {
                row,
                label: label.to_string(),
            })?),
        };
        if r.probs.len() != class_names.len() {
            return Err(Error::InvalidProbabilities {
                row,
                reason: format!("expected {} probabilities, got {}", class_names.len(), r.probs.len()),
            });
        }
        let probs = probabilities_at(r.probs, row)?;
        if let Some(h) = r.entropy {
            if !(0.0..=1.0).contains(&h) {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("entropy {h} outside [0, 1]"),
                });
            }
        }
        records.push(PredictionRecord {
            sample_id: r.sample_id,
            true_label,
            probs,
            entropy: r.entropy,
        });
    }
    EvaluationSet::new(
        file.name.unwrap_or_else(|| opts.name.clone()),
        class_names,
        positive,
        records,
        file.role.unwrap_or(opts.role),
    )
}

/// Serialize to the CSV prediction format. Entropy annotations are not part of
/// the CSV schema and are dropped.
pub fn to_csv(set: &EvaluationSet) -> String {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string(), "true_label".to_string()];
    header.extend(set.class_names().iter().map(|c| format!("p_{c}")));
    writer.write_record(&header).expect("in-memory write");
    for r in set.records() {
        let mut row = Vec::with_capacity(header.len());
        row.push(r.sample_id.clone());
        row.push(
            r.true_label
                .map(|t| set.class_names()[t].clone())
                .unwrap_or_default(),
        );
        row.extend(r.probs.as_slice().iter().map(|p| p.to_string()));
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn to_json_value(set: &EvaluationSet) -> serde_json::Value {
    let doc = JsonPredictions {
        name: Some(set.name().to_string()),
        role: Some(set.role()),
        class_names: set.class_names().to_vec(),
        positive_class: ClassRef::Name(set.positive_class_name().to_string()),
        records: set
            .records()
            .iter()
            .map(|r| JsonRecord {
                sample_id: r.sample_id.clone(),
                true_label: r.true_label.map(|t| set.class_names()[t].clone()),
                probs: r.probs.as_slice().to_vec(),
                entropy: r.entropy,
            })
            .collect(),
    };
    serde_json::to_value(doc).expect("prediction document serializes")
}

pub fn to_json(set: &EvaluationSet) -> String {
    serde_json::to_string_pretty(&to_json_value(set)).expect("prediction document serializes")
}
