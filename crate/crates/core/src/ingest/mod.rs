//! Parsing prediction files and dataset layouts into validated structures.

mod manifest;
mod predictions;

pub use manifest::{
    binarize_labels, build_oversample_plan, make_split, merge_manifests, parse_dataset_layout, BinaryLabel,
    DatasetManifest, LabelPolicy, LayoutDescriptor, LayoutKind, ManifestEntry, OversampleEntry, OversamplePlan,
    Split,
};
pub use predictions::{
    parse_predictions, set_from_json_value, to_csv, to_json, to_json_value, ClassProbabilities, EvaluationSet,
    ParseOptions, PredictionFormat, PredictionRecord, ProbabilityViolation, Role, PROBABILITY_SUM_TOLERANCE,
};
