//! Normalized Shannon entropy of predicted class distributions.
//!
//! The logarithm base is the class count, so the score lies in `[0, 1]`:
//! 0 for a one-hot prediction, 1 for a uniform one.

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::ingest::{ClassProbabilities, EvaluationSet};

/// Probabilities below this are clamped inside the logarithm only.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntropyScore(f64);

impl EntropyScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<EntropyScore> for f64 {
    fn from(s: EntropyScore) -> f64 {
        s.0
    }
}

/// `H = -sum p_i log_n p_i` with `0 log 0 = 0`.
pub fn shannon_entropy(probs: &ClassProbabilities) -> EntropyScore {
    let n = probs.len();
    let base = (n as f64).ln();
    let mut h = 0.0;
    for &p in probs.as_slice() {
        if p > 0.0 {
            h -= p * p.max(LOG_FLOOR).ln();
        }
    }
    EntropyScore((h / base).clamp(0.0, 1.0))
}

/// Populate every record's entropy. Order and other fields are unchanged.
pub fn annotate_set(set: &EvaluationSet) -> EvaluationSet {
    let mut out = set.clone();
    exec::for_each_mut(out.records_mut(), |r| {
        r.entropy = Some(shannon_entropy(&r.probs).value());
    });
    out
}

/// Sequential annotation, kept for benchmarking against [`annotate_set`].
pub fn annotate_set_sequential(set: &EvaluationSet) -> EvaluationSet {
    let mut out = set.clone();
    for r in out.records_mut() {
        r.entropy = Some(shannon_entropy(&r.probs).value());
    }
    out
}
