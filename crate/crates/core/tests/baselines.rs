mod common;

use seegnet::cohort::{split_trials, SplitLabel, SplitRatios};
use seegnet::eval::{ablation_csv, ablation_suite, baseline, BaselineKind, Variant, ALPHAS};
use seegnet::model::ModelConfig;
use seegnet::train::TrainConfig;

#[test]
fn every_baseline_produces_a_test_report() {
    let cohort = common::toy_cohort(2, 80, 3, 11);
    let split = split_trials(&cohort, SplitRatios::default(), 1).unwrap();
    let model_cfg = ModelConfig {
        e_max: 4,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    for kind in BaselineKind::ALL {
        let out = baseline(kind, &cohort, &split, "S01", &cfg, &model_cfg).unwrap();
        let r = &out.report;
        assert_eq!(r.subjects.len(), 1);
        assert_eq!(r.subjects[0].subject_id, "S01");
        assert_eq!(r.subjects[0].n_trials, split.count(1, SplitLabel::Test));
        assert!(r.pooled_r2 <= 1.0 && r.pooled_rmse_ms >= 0.0);
        match kind {
            BaselineKind::Ridge | BaselineKind::Lasso => assert!(ALPHAS.contains(&out.alpha.unwrap())),
            _ => assert!(out.alpha.is_none()),
        }
        assert_eq!(out.n_components.is_some(), out.history.is_none());
        if kind == BaselineKind::Wiener {
            // The bump latency tracks RT, so a linear decoder does better than chance.
            assert!(r.pooled_r2 > 0.3, "wiener R² {}", r.pooled_r2);
        }
    }
    assert!(baseline(BaselineKind::Wiener, &cohort, &split, "nope", &cfg, &model_cfg).is_err());
}

#[test]
fn ablation_suite_emits_one_row_per_variant() {
    let cohort = common::toy_cohort(2, 30, 2, 12);
    let split = split_trials(&cohort, SplitRatios::default(), 0).unwrap();
    let base = ModelConfig {
        e_max: 4,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 1,
        multi_batch: 64,
        ..TrainConfig::default()
    };
    let rows = ablation_suite(&base, &cohort, &split, &cfg, &Variant::ALL).unwrap();
    assert_eq!(rows.len(), 6);
    let rh = rows.iter().find(|r| r.variant == Variant::NoRh).unwrap();
    assert_eq!(rh.parameters.subject_specific, 2081);
    let full = &rows[0];
    assert_eq!(full.parameters.subject_specific, 2 * 2081);
    let two_d = rows.iter().find(|r| r.variant == Variant::TwoD).unwrap();
    let (e, t) = (4u128, base.n_tokens() as u128);
    assert_eq!(two_d.attention_flops * (e + t), full.attention_flops * e * t);
    let csv = ablation_csv(&rows);
    assert_eq!(csv.lines().count(), 1 + 6 * 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("full,S00,"));
}
