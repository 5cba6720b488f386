mod common;

use seegnet::cohort::{split_trials, SplitLabel, SplitRatios};
use seegnet::eval::{evaluate, mean_sem};
use seegnet::model::{Model, ModelConfig, Role};
use seegnet::train::{finetune, loo_workflow, multi_split_average, train, transfer, Mode, TrainConfig};

fn config() -> ModelConfig {
    ModelConfig {
        e_max: 4,
        ..ModelConfig::default()
    }
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        multi_batch: 64,
        single_batch: 32,
        seed,
        ..TrainConfig::default()
    }
}

fn trainable_values(m: &Model) -> Vec<u32> {
    m.params
        .tensors
        .iter()
        .filter(|t| t.role != Role::Buffer)
        .flat_map(|t| m.params.values[t.offset..t.offset + t.len].iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn single_subject_training_fits_its_data() {
    let cohort = common::toy_cohort(1, 60, 3, 1);
    let split = split_trials(&cohort, SplitRatios::default(), 0).unwrap();
    let cfg = TrainConfig {
        lr: 3e-3,
        ..quick(120, 0)
    };
    let (model, history) = train(&config(), &cohort, &split, &cfg, Mode::SingleSubject).unwrap();
    assert_eq!(history.records.len(), 120);
    let first = history.records[0].train_loss;
    let last = history.records.last().unwrap().train_loss;
    assert!(last < 0.2 * first, "train loss {first} -> {last}");
    let train_fit = evaluate(&model, &cohort, &split, SplitLabel::Train).unwrap();
    assert!(train_fit.pooled_r2 > 0.8, "train R² {}", train_fit.pooled_r2);
    assert!(history.records.iter().any(|r| r.epoch == history.best_epoch));
}

#[test]
fn single_mode_rejects_multi_subject_cohorts() {
    let cohort = common::toy_cohort(2, 20, 2, 1);
    let split = split_trials(&cohort, SplitRatios::default(), 0).unwrap();
    assert!(train(&config(), &cohort, &split, &quick(1, 0), Mode::SingleSubject).is_err());
}

#[test]
fn training_is_deterministic_given_seed() {
    let cohort = common::toy_cohort(2, 40, 3, 2);
    let split = split_trials(&cohort, SplitRatios::default(), 3).unwrap();
    let run = |seed| train(&config(), &cohort, &split, &quick(4, seed), Mode::MultiSubject).unwrap();
    let (a, ha) = run(7);
    let (b, hb) = run(7);
    let (c, _) = run(8);
    assert_eq!(a.params.values, b.params.values);
    assert_eq!(ha.losses(), hb.losses());
    assert_ne!(a.params.values, c.params.values);
    let ra = serde_json::to_string(&evaluate(&a, &cohort, &split, SplitLabel::Test).unwrap()).unwrap();
    let rb = serde_json::to_string(&evaluate(&b, &cohort, &split, SplitLabel::Test).unwrap()).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn finetune_with_zero_lr_keeps_trainable_parameters() {
    let cohort = common::toy_cohort(2, 30, 2, 3);
    let split = split_trials(&cohort, SplitRatios::default(), 0).unwrap();
    let (pre, _) = train(&config(), &cohort, &split, &quick(2, 0), Mode::MultiSubject).unwrap();
    let cfg = TrainConfig { lr: 0.0, ..quick(3, 0) };
    let (tuned, history) = finetune(&pre, &cohort, &split, "S01", &cfg).unwrap();
    assert_eq!(trainable_values(&tuned), trainable_values(&pre));
    assert_eq!(history.records.len(), 3);
    assert!(history.records.iter().all(|r| r.lr == 0.0));
    assert!(finetune(&pre, &cohort, &split, "S09", &cfg).is_err());
}

#[test]
fn transfer_head_phase_touches_only_the_new_head() {
    let cohort = common::toy_cohort(3, 40, 3, 4);
    let split = split_trials(&cohort, SplitRatios::default(), 0).unwrap();
    let pre_cohort = cohort.select(&["S00", "S01"]).unwrap();
    let pre_split = split.subset(&[0, 1]).unwrap();
    let (pre, _) = train(&config(), &pre_cohort, &pre_split, &quick(2, 0), Mode::MultiSubject).unwrap();
    let cfg = TrainConfig {
        unfreeze_epoch: 4,
        ..quick(6, 0)
    };
    let out = transfer(&pre, &cohort, &split, "S02", &cfg).unwrap();
    assert_eq!(out.freeze.head_len, 2081);
    assert_eq!(out.freeze.changed_outside_head, 0);
    assert!(
        out.freeze.changed > 2000 && out.freeze.changed <= 2081,
        "{:?}",
        out.freeze
    );
    assert_eq!(out.model.n_heads(), 3);
    assert_eq!(out.history.records.len(), 6);
    assert!(transfer(&pre, &cohort, &split, "S00", &cfg).is_err());
    assert!(transfer(
        &pre,
        &cohort,
        &split,
        "S02",
        &TrainConfig {
            unfreeze_epoch: 6,
            ..cfg
        }
    )
    .is_err());
}

#[test]
fn leave_one_out_runs_once_per_subject() {
    let cohort = common::toy_cohort(3, 30, 2, 5);
    let split = split_trials(&cohort, SplitRatios::default(), 0).unwrap();
    let pre = quick(2, 0);
    let tr = TrainConfig {
        unfreeze_epoch: 1,
        ..quick(2, 0)
    };
    let reports = loo_workflow(&config(), &cohort, &split, &pre, &tr, None).unwrap();
    assert_eq!(reports.len(), 3);
    for r in &reports {
        assert_eq!(r.pretrain_subjects.len(), 2);
        assert!(!r.pretrain_subjects.contains(&r.subject_id));
        assert_eq!(r.test.subject_id, r.subject_id);
        assert_eq!(r.freeze.changed_outside_head, 0);
    }
    let two = common::toy_cohort(2, 30, 2, 5);
    let split2 = split_trials(&two, SplitRatios::default(), 0).unwrap();
    assert!(loo_workflow(&config(), &two, &split2, &pre, &tr, None).is_err());
}

#[test]
fn multi_split_average_summarizes_each_metric() {
    let out = multi_split_average(4, |seed| Ok(vec![("a".into(), seed as f64), ("b".into(), 1.0)])).unwrap();
    assert_eq!(out[0].0, "a");
    assert_eq!(out[0].1, mean_sem(&[0.0, 1.0, 2.0, 3.0]).unwrap());
    assert_eq!(out[1].1.sem, 0.0);
    let one = multi_split_average(1, |_| Ok(vec![("r2".into(), 0.4)])).unwrap();
    assert!(!one[0].1.sem_defined);
    let bad = multi_split_average(2, |seed| Ok(vec![(format!("m{seed}"), 0.0)]));
    assert!(bad.is_err());
    assert!(multi_split_average(0, |_| Ok(vec![])).is_err());
}

#[test]
fn multi_split_training_end_to_end() {
    let cohort = common::toy_cohort(2, 30, 2, 6);
    let summary = multi_split_average(2, |split_seed| {
        let split = split_trials(&cohort, SplitRatios::default(), split_seed)?;
        let (m, _) = train(&config(), &cohort, &split, &quick(2, 0), Mode::MultiSubject)?;
        let r = evaluate(&m, &cohort, &split, SplitLabel::Test)?;
        Ok(vec![
            ("pooled_r2".into(), r.pooled_r2),
            ("rmse_ms".into(), r.pooled_rmse_ms),
        ])
    })
    .unwrap();
    assert_eq!(summary.len(), 2);
    assert_eq!(summary[0].1.n, 2);
    assert!(summary[1].1.mean > 0.0);
}

#[test]
fn trained_checkpoint_round_trips() {
    let cohort = common::toy_cohort(2, 30, 2, 7);
    let split = split_trials(&cohort, SplitRatios::default(), 0).unwrap();
    let (m, h) = train(&config(), &cohort, &split, &quick(2, 0), Mode::MultiSubject).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path(), h.best_epoch).unwrap();
    let (back, meta) = Model::load(dir.path()).unwrap();
    assert_eq!(meta.epoch, h.best_epoch);
    assert_eq!(
        evaluate(&m, &cohort, &split, SplitLabel::Test).unwrap(),
        evaluate(&back, &cohort, &split, SplitLabel::Test).unwrap()
    );
}
