//! Seeded synthetic prediction sets with known ground truth.
//!
//! The generator writes a validation and a test set plus a sidecar recording
//! exactly which records were planted as misdiagnoses, their entropies, and
//! per-bin confidence bookkeeping. Tests use the sidecar as an oracle that is
//! independent of the evaluation code.
//!
//! In planted mode each record's confidence comes from one of two bands:
//! a confident band (`[0.97, 0.9999]`, entropy below 0.2) or an uncertain band
//! (`[0.52, 0.80]`, entropy above 0.72). Correct records and uncorrelated
//! errors draw the uncertain band with probability `ambiguous_fraction`;
//! with probability `correlation` an error is forced into the uncertain band.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::bin_index;
use crate::error::{Error, Result};
use crate::ingest::{ClassProbabilities, EvaluationSet, PredictionRecord, Role};

pub const CLASS_NAMES: [&str; 2] = ["Melanoma", "NonMelanoma"];
const POSITIVE: usize = 0;
const NEGATIVE: usize = 1;

pub const CONFIDENT_BAND: (f64, f64) = (0.97, 0.9999);
pub const UNCERTAIN_BAND: (f64, f64) = (0.52, 0.80);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureMode {
    /// Exact error counts, entropy-error correlation controlled.
    Planted,
    /// Confidence `c ~ U(0.5, 1]`, correct with probability `c`.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorBudget {
    Rate(f64),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    /// Records per set.
    pub n: usize,
    pub positive_fraction: f64,
    pub errors: ErrorBudget,
    /// Share of planted errors that are false positives.
    pub fp_share: f64,
    pub correlation: f64,
    pub ambiguous_fraction: f64,
    pub mode: FixtureMode,
    pub bins: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n: 1000,
            positive_fraction: 0.3,
            errors: ErrorBudget::Rate(0.1),
            fp_share: 0.5,
            correlation: 0.6,
            ambiguous_fraction: 0.03,
            mode: FixtureMode::Planted,
            bins: 10,
            seed: 0,
        }
    }
}

impl FixtureConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("fixture size n must be positive".into()));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} {v} outside [0, 1]")))
            }
        };
        unit("positive_fraction", self.positive_fraction)?;
        unit("fp_share", self.fp_share)?;
        unit("correlation", self.correlation)?;
        unit("ambiguous_fraction", self.ambiguous_fraction)?;
        if let ErrorBudget::Rate(r) = self.errors {
            unit("error rate", r)?;
        }
        if self.bins == 0 {
            return Err(Error::InvalidParameter("bins must be at least 1".into()));
        }
        Ok(())
    }

    pub fn error_count(&self) -> usize {
        match self.errors {
            ErrorBudget::Rate(r) => (r * self.n as f64).round() as usize,
            ErrorBudget::Count(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    /// Non-melanoma predicted as melanoma.
    FalsePositive,
    /// Melanoma predicted as non-melanoma.
    FalseNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Confident,
    Uncertain,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedError {
    pub index: usize,
    pub sample_id: String,
    pub kind: ErrorKind,
    pub band: Band,
    pub confidence: f64,
    /// Binary entropy in bits of the generated probabilities.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTarget {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
    pub correct: u64,
    pub confidence_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSidecar {
    pub name: String,
    pub n: usize,
    pub melanoma: usize,
    pub non_melanoma: usize,
    pub planted_errors: Vec<PlantedError>,
    pub bins: Vec<BinTarget>,
}

impl SetSidecar {
    pub fn count(&self, kind: ErrorKind) -> usize {
        self.planted_errors.iter().filter(|e| e.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: FixtureConfig,
    pub validation: SetSidecar,
    pub test: SetSidecar,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub validation: EvaluationSet,
    pub test: EvaluationSet,
    pub sidecar: Sidecar,
}

/// Binary entropy in bits, written out independently of the library's
/// entropy code.
fn bits(c: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    term(c) + term(1.0 - c)
}

fn draw(rng: &mut ChaCha8Rng, band: (f64, f64)) -> f64 {
    rng.random_range(band.0..=band.1)
}

pub fn generate(config: &FixtureConfig) -> Result<Fixture> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (validation, val_side) = generate_set(config, "val", Role::Validation, &mut rng)?;
    rng.set_stream(1);
    let (test, test_side) = generate_set(config, "test", Role::Test, &mut rng)?;
    Ok(Fixture {
        validation,
        test,
        sidecar: Sidecar {
            config: config.clone(),
            validation: val_side,
            test: test_side,
        },
    })
}

fn generate_set(
    config: &FixtureConfig,
    prefix: &str,
    role: Role,
    rng: &mut ChaCha8Rng,
) -> Result<(EvaluationSet, SetSidecar)> {
    let n = config.n;
    let n_pos = (config.positive_fraction * n as f64).round() as usize;
    let mut truth: Vec<usize> = (0..n).map(|i| if i < n_pos { POSITIVE } else { NEGATIVE }).collect();
    truth.shuffle(rng);

    // Per record: (is_error, band, confidence of the predicted class)
    let mut plan: Vec<(bool, Band, f64)> = Vec::with_capacity(n);
    match config.mode {
        FixtureMode::Planted => {
            let n_err = config.error_count();
            let n_fp = (config.fp_share * n_err as f64).round() as usize;
            let n_fn = n_err - n_fp;
            let mut neg: Vec<usize> = (0..n).filter(|&i| truth[i] == NEGATIVE).collect();
            let mut pos: Vec<usize> = (0..n).filter(|&i| truth[i] == POSITIVE).collect();
            if n_fp > neg.len() || n_fn > pos.len() {
                return Err(Error::InvalidParameter(format!(
                    "cannot plant {n_fp} false positives and {n_fn} false negatives among {} negatives and {} positives",
                    neg.len(),
                    pos.len()
                )));
            }
            neg.shuffle(rng);
            pos.shuffle(rng);
            let mut is_error = vec![false; n];
            for &i in neg.iter().take(n_fp).chain(pos.iter().take(n_fn)) {
                is_error[i] = true;
            }
            for &err in &is_error {
                let forced = err && rng.random::<f64>() < config.correlation;
                let band = if forced || rng.random::<f64>() < config.ambiguous_fraction {
                    Band::Uncertain
                } else {
                    Band::Confident
                };
                let c = match band {
                    Band::Uncertain => draw(rng, UNCERTAIN_BAND),
                    _ => draw(rng, CONFIDENT_BAND),
                };
                plan.push((err, band, c));
            }
        }
        FixtureMode::Calibrated => {
            for _ in 0..n {
                // (0.5, 1]
                let c = 1.0 - 0.5 * rng.random::<f64>();
                let err = rng.random::<f64>() >= c;
                plan.push((err, Band::Calibrated, c));
            }
        }
    }

    let mut records = Vec::with_capacity(n);
    let mut planted = Vec::new();
    let mut bins: Vec<BinTarget> = (0..config.bins)
        .map(|m| BinTarget {
            lower: m as f64 / config.bins as f64,
            upper: (m + 1) as f64 / config.bins as f64,
            count: 0,
            correct: 0,
            confidence_sum: 0.0,
        })
        .collect();
    for (i, (&label, &(err, band, c))) in truth.iter().zip(&plan).enumerate() {
        let sample_id = format!("{prefix}-{:05}", i + 1);
        let predicted = if err { 1 - label } else { label };
        let mut probs = vec![0.0; 2];
        probs[predicted] = c;
        probs[1 - predicted] = 1.0 - c;
        let b = bin_index(c, config.bins);
        bins[b].count += 1;
        bins[b].correct += u64::from(!err);
        bins[b].confidence_sum += c;
        if err {
            planted.push(PlantedError {
                index: i,
                sample_id: sample_id.clone(),
                kind: if label == POSITIVE {
                    ErrorKind::FalseNegative
                } else {
                    ErrorKind::FalsePositive
                },
                band,
                confidence: c,
                entropy: bits(c),
            });
        }
        let probs = ClassProbabilities::new(probs).expect("generated probabilities are valid");
        records.push(PredictionRecord::new(sample_id, Some(label), probs));
    }

    let set = EvaluationSet::new(
        format!("{prefix}-fixture"),
        CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        POSITIVE,
        records,
        role,
    )?;
    let side = SetSidecar {
        name: set.name().to_string(),
        n,
        melanoma: n_pos,
        non_melanoma: n - n_pos,
        planted_errors: planted,
        bins,
    };
    Ok((set, side))
}
