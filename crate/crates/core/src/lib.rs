//! Selective classification for melanoma classifiers.
//!
//! Prediction sets are scored with normalized Shannon entropy; records whose
//! entropy exceeds a threshold are routed to an "Uncertain" class for human
//! review. The threshold is tuned on validation data to minimize the mean of
//! ECE and Brier score, and test metrics are reported before and after
//! rejection.
//!
//! With the default `parallel` feature, annotation and threshold sweeps run
//! on the rayon pool; disabling it gives an identical sequential build.

pub mod calibration;
pub mod error;
mod exec;
pub mod fixture;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod rejection;
pub mod report;
pub mod uncertainty;

pub use error::{Error, Result};
pub use ingest::{EvaluationSet, PredictionRecord};
pub use rejection::RejectionPolicy;
