use melreject_core::calibration::expected_calibration_error;
use melreject_core::fixture::{generate, Band, ErrorBudget, ErrorKind, FixtureConfig, FixtureMode};
use melreject_core::pipeline::run_pipeline;
use melreject_core::rejection::{apply_threshold, evaluate_with_rejection, sweep_thresholds, RejectionPolicy};
use melreject_core::report::{false_diagnosis_reduction, RowMeta};
use melreject_core::uncertainty::annotate_set;
use melreject_core::EvaluationSet;

/// 0.999 quantile of chi-square with 9 degrees of freedom.
const CHI2_9_999: f64 = 27.877;

fn accuracy_by_hand(set: &EvaluationSet, t: f64) -> f64 {
    let kept: Vec<_> = set.records().iter().filter(|r| r.entropy.unwrap() <= t).collect();
    kept.iter().filter(|r| r.is_correct() == Some(true)).count() as f64 / kept.len() as f64
}

pub fn ablation_config() -> FixtureConfig {
    FixtureConfig {
        n: 3530,
        positive_fraction: 0.3,
        errors: ErrorBudget::Count(353),
        fp_share: 0.52,
        correlation: 0.45,
        ambiguous_fraction: 0.03,
        mode: FixtureMode::Planted,
        bins: 10,
        seed: 7,
    }
}

#[test]
fn uncorrelated_errors_spread_evenly_over_entropy_deciles() {
    let fx = generate(&FixtureConfig {
        n: 10_000,
        correlation: 0.0,
        ambiguous_fraction: 0.2,
        seed: 5,
        ..FixtureConfig::default()
    })
    .unwrap();
    let test = annotate_set(&fx.test);
    let mut entropies: Vec<f64> = test.records().iter().map(|r| r.entropy.unwrap()).collect();
    entropies.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..10).map(|d| entropies[d * entropies.len() / 10]).collect();
    let mut observed = [0f64; 10];
    for e in &fx.sidecar.test.planted_errors {
        let h = test.records()[e.index].entropy.unwrap();
        observed[cuts.iter().filter(|&&c| h >= c).count()] += 1.0;
    }
    let expected = fx.sidecar.test.planted_errors.len() as f64 / 10.0;
    let chi2: f64 = observed.iter().map(|o| (o - expected).powi(2) / expected).sum();
    assert!(chi2 < CHI2_9_999, "chi2 = {chi2}, observed {observed:?}");
}

#[test]
fn correlated_errors_lift_accuracy_at_low_threshold() {
    let fx = generate(&FixtureConfig { n: 2000, correlation: 0.8, seed: 2, ..FixtureConfig::default() }).unwrap();
    let val = annotate_set(&fx.validation);
    let sweep = sweep_thresholds(&val, &RejectionPolicy::default()).unwrap();
    let at = |t: f64| sweep.iter().find(|p| (p.threshold - t).abs() < 1e-12).unwrap();
    assert_eq!(at(0.1).accuracy.unwrap(), accuracy_by_hand(&val, 0.1));
    assert_eq!(at(1.0).accuracy.unwrap(), accuracy_by_hand(&val, 1.0));
    assert!(at(0.1).accuracy.unwrap() >= at(1.0).accuracy.unwrap());
}

#[test]
fn cap_marks_high_rejection_points_infeasible() {
    // Calibrated mode: confidence uniform on (0.5, 1], median entropy near 0.81.
    let fx = generate(&FixtureConfig { n: 1000, mode: FixtureMode::Calibrated, seed: 4, ..FixtureConfig::default() })
        .unwrap();
    let val = annotate_set(&fx.validation);
    let policy = RejectionPolicy::default();
    let sweep = sweep_thresholds(&val, &policy).unwrap();
    let mut entropies: Vec<f64> = val.records().iter().map(|r| r.entropy.unwrap()).collect();
    entropies.sort_by(f64::total_cmp);
    let median = entropies[entropies.len() / 2];
    for p in &sweep {
        let rejected = val.records().iter().filter(|r| r.entropy.unwrap() > p.threshold).count();
        let fraction = rejected as f64 / val.len() as f64;
        assert_eq!(p.reject_fraction, fraction);
        if fraction > policy.max_reject_fraction {
            assert!(!p.feasible, "t = {}", p.threshold);
        }
        if p.threshold < median {
            assert!(!p.feasible, "t = {} below median {median}", p.threshold);
        }
    }
    assert!(sweep.iter().any(|p| p.feasible));
}

#[test]
fn fully_separated_errors_are_all_prevented_with_their_split() {
    let fx = generate(&FixtureConfig {
        n: 2000,
        errors: ErrorBudget::Count(353),
        fp_share: 0.52,
        correlation: 1.0,
        ambiguous_fraction: 0.0,
        seed: 8,
        ..FixtureConfig::default()
    })
    .unwrap();
    let test = annotate_set(&fx.test);
    let partition = apply_threshold(&test, 0.5).unwrap();
    let summary = false_diagnosis_reduction(&test, &partition.accepted).unwrap();
    assert_eq!(summary.fp_before as usize, fx.sidecar.test.count(ErrorKind::FalsePositive));
    assert_eq!(summary.fn_before as usize, fx.sidecar.test.count(ErrorKind::FalseNegative));
    assert_eq!((summary.fp_before, summary.fn_before), (184, 169));
    assert_eq!((summary.fp_after, summary.fn_after), (0, 0));
    assert_eq!(summary.prevented, 353);
}

#[test]
fn false_negative_reduction_matches_sidecar() {
    let fx = generate(&FixtureConfig {
        n: 2000,
        errors: ErrorBudget::Count(100),
        fp_share: 0.0,
        correlation: 0.85,
        seed: 13,
        ..FixtureConfig::default()
    })
    .unwrap();
    let mut fn_entropies: Vec<f64> = fx.sidecar.test.planted_errors.iter().map(|e| e.entropy).collect();
    assert_eq!(fn_entropies.len(), 100);
    fn_entropies.sort_by(|a, b| b.total_cmp(a));
    // Threshold halfway between the 81st and 82nd most uncertain misses.
    let t = (fn_entropies[80] + fn_entropies[81]) / 2.0;
    let test = annotate_set(&fx.test);
    let partition = apply_threshold(&test, t).unwrap();
    let summary = false_diagnosis_reduction(&test, &partition.accepted).unwrap();
    assert_eq!(summary.fn_before, 100);
    assert_eq!(summary.fn_after, 19);
    assert_eq!(summary.fn_reduction(), Some(0.81));
}

#[test]
fn calibrated_fixture_has_small_ece() {
    let fx = generate(&FixtureConfig { n: 10_000, mode: FixtureMode::Calibrated, seed: 21, ..FixtureConfig::default() })
        .unwrap();
    let ece = expected_calibration_error(&fx.test, 10).unwrap().ece;
    assert!(ece < 0.02, "ece = {ece}");
    assert!(fx.sidecar.test.planted_errors.iter().all(|e| e.band == Band::Calibrated));
}

#[test]
fn sidecar_bins_match_library_bins() {
    let fx = generate(&FixtureConfig { n: 3000, mode: FixtureMode::Calibrated, seed: 6, ..FixtureConfig::default() })
        .unwrap();
    let lib = expected_calibration_error(&fx.test, 10).unwrap();
    for (target, stat) in fx.sidecar.test.bins.iter().zip(&lib.bins) {
        assert_eq!(target.count, stat.count);
        if stat.count > 0 {
            let acc = target.correct as f64 / target.count as f64;
            assert!((acc - stat.accuracy.unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn annotation_of_large_set_stays_in_unit_interval() {
    let fx = generate(&FixtureConfig { n: 10_000, seed: 1, ..FixtureConfig::default() }).unwrap();
    let test = annotate_set(&fx.test);
    assert!(test.records().iter().all(|r| (0.0..=1.0).contains(&r.entropy.unwrap())));
}

#[test]
fn ablation_shaped_fixture_prevents_planted_errors() {
    let fx = generate(&ablation_config()).unwrap();
    let out = run_pipeline(&fx.validation, &fx.test, &RejectionPolicy::default(), RowMeta::default()).unwrap();
    let t = out.policy.threshold;
    let planted = &fx.sidecar.test.planted_errors;
    assert_eq!(planted.len(), 353);
    let above = planted.iter().filter(|e| out.test.records()[e.index].entropy.unwrap() > t).count();
    assert_eq!(out.reduction.prevented, above as i64);
    assert!(above as f64 >= 0.405 * 353.0, "only {above} above t = {t}");
    assert!(out.reduction.prevented >= 143);
    let after = out.evaluation.after.as_ref().unwrap();
    assert!(after.classification.accuracy.unwrap() > out.evaluation.before.classification.accuracy.unwrap());
    // Sidecar entropies (bits, computed independently) agree with the library.
    for e in planted {
        assert!((e.entropy - out.test.records()[e.index].entropy.unwrap()).abs() < 1e-9);
    }
    // The same evaluation straight through the library.
    let direct = evaluate_with_rejection(&annotate_set(&fx.test), &out.policy).unwrap();
    assert_eq!(direct, out.evaluation);
}
