use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("probability sum {sum} exceeds tolerance at row {row}")]
    ProbabilitySum { row: usize, sum: f64 },

    #[error("invalid probabilities at row {row}: {reason}")]
    InvalidProbabilities { row: usize, reason: String },

    #[error("duplicate sample_id {sample_id:?} at row {row}")]
    DuplicateSample { row: usize, sample_id: String },

    #[error("unknown label {label:?} at row {row}")]
    UnknownLabel { row: usize, label: String },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("invalid evaluation set: {0}")]
    InvalidSet(String),

    #[error("record {0:?} has no true label")]
    MissingLabel(String),

    #[error("record {0:?} has no entropy annotation")]
    NotAnnotated(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("AUC-ROC is undefined: {0}")]
    UndefinedAuc(String),

    #[error("no admissible threshold: every sweep point is infeasible")]
    NoAdmissibleThreshold,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("label file references missing path {path:?} (row {row})")]
    MissingFile { row: usize, path: PathBuf },

    #[error("folder layout at {0:?} has no class directories")]
    NoClassDirectories(PathBuf),

    #[error("entry {entry_id:?} has unknown raw label {raw_label:?}")]
    UnknownRawLabel { entry_id: String, raw_label: String },

    #[error("{0} class empty")]
    EmptyClass(&'static str),

    #[error("duplicate source_name {0:?}")]
    DuplicateSource(String),

    #[error("duplicate entry_id {0:?}")]
    DuplicateEntry(String),

    #[error("entry {0:?} has not been binarized")]
    NotBinarized(String),

    #[error("unknown metric key {0:?}")]
    UnknownMetric(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
