//! The full evaluation pipeline: annotate, sweep on validation, select a
//! threshold, evaluate test before and after rejection, and render the
//! report files. The CLI and the HTTP service both go through here.

use crate::calibration::reliability_csv;
use crate::error::Result;
use crate::ingest::EvaluationSet;
use crate::rejection::{
    evaluate_with_rejection, select_threshold, sweep_csv, sweep_thresholds, RejectionEvaluation, RejectionPolicy,
    SweepPoint,
};
use crate::report::{self, BeforeAfterRow, ReductionSummary, RowMeta};
use crate::uncertainty::annotate_set;

/// Output file names written by [`PipelineOutput::files`].
pub const ROW_JSON: &str = "before_after.json";
pub const ROW_CSV: &str = "before_after.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const RELIABILITY_CSV: &str = "reliability.csv";
pub const REDUCTION_CSV: &str = "reduction.csv";

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub validation: EvaluationSet,
    pub test: EvaluationSet,
    pub sweep: Vec<SweepPoint>,
    pub policy: RejectionPolicy,
    pub evaluation: RejectionEvaluation,
    pub row: BeforeAfterRow,
    pub reduction: ReductionSummary,
}

/// Tune the threshold on `validation` with `policy`'s grid and cap, then
/// apply it to `test`.
pub fn run_pipeline(
    validation: &EvaluationSet,
    test: &EvaluationSet,
    policy: &RejectionPolicy,
    meta: RowMeta,
) -> Result<PipelineOutput> {
    policy.validate()?;
    let validation = annotate_set(validation);
    let test = annotate_set(test);
    let sweep = sweep_thresholds(&validation, policy)?;
    let selected = select_threshold(&sweep, policy)?;
    let evaluation = evaluate_with_rejection(&test, &selected)?;
    let row = BeforeAfterRow::from_summary(meta, &evaluation.summary());
    let reduction = report::false_diagnosis_reduction(&test, &evaluation.partition.accepted)?;
    Ok(PipelineOutput {
        validation,
        test,
        sweep,
        policy: selected,
        evaluation,
        row,
        reduction,
    })
}

impl PipelineOutput {
    /// The five report files as `(file name, contents)`.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        let rows = std::slice::from_ref(&self.row);
        vec![
            (ROW_JSON, report::render_json(rows)),
            (ROW_CSV, report::render_csv(rows)),
            (SWEEP_CSV, sweep_csv(&self.sweep)),
            (RELIABILITY_CSV, reliability_csv(&self.evaluation.before.calibration.bins)),
            (
                REDUCTION_CSV,
                report::reduction_csv(&[(self.row.test_set.clone(), self.reduction)]),
            ),
        ]
    }
}
