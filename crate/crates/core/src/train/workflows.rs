use serde::{Deserialize, Serialize};

use super::config::{LossKind, Mode, TrainConfig};
use super::optim::AdamW;
use super::trainer::{run_head_phase, run_phase, Best, Dataset, Phase, TrainHistory};
use crate::cohort::{SplitAssignment, SplitLabel};
use crate::error::{Error, Result};
use crate::eval::{mean_sem, r2, rmse, MeanSem, SubjectScore};
use crate::model::{Model, ModelConfig, TargetScaler};
use crate::rng::derive_seed;
use crate::sigproc::ProcessedCohort;

fn optimizer(cfg: &TrainConfig) -> AdamW {
    AdamW::new(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
}

fn subject_index(cohort: &ProcessedCohort, subject: &str) -> Result<usize> {
    cohort
        .subject_index(subject)
        .ok_or_else(|| Error::UnknownSubject(subject.to_string()))
}

/// Train a fresh model on every subject of `cohort`. Single-subject mode
/// requires a one-subject cohort.
pub fn train(
    config: &ModelConfig,
    cohort: &ProcessedCohort,
    split: &SplitAssignment,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if cohort.subjects.is_empty() {
        return Err(Error::invalid("cannot train on an empty cohort"));
    }
    if mode == Mode::SingleSubject && cohort.subjects.len() != 1 {
        return Err(Error::invalid(format!(
            "single-subject training got {} subjects",
            cohort.subjects.len()
        )));
    }
    let ids = cohort.subjects.iter().map(|s| s.subject_id.clone()).collect();
    let mut model = Model::new(config.clone(), ids, cfg.seed)?;
    let train = Dataset::from_split(&model, cohort, split, SplitLabel::Train)?;
    let val = Dataset::from_split(&model, cohort, split, SplitLabel::Val)?;
    model.scaler = TargetScaler::fit(&train.targets_ms)?;

    let mut history = TrainHistory::new(LossKind::Huber);
    let mut best = Best::new();
    let all = |_: usize| true;
    let phase = Phase {
        epochs: 0..cfg.epochs,
        schedule: cfg.schedule(mode),
        batch: cfg.batch(mode),
        loss: LossKind::Huber,
        trainable: &all,
    };
    run_phase(
        &mut model,
        &mut optimizer(cfg),
        &train,
        &val,
        cfg,
        &phase,
        &mut history,
        &mut best,
    )?;
    best.restore(&mut model, &mut history);
    Ok((model, history))
}

/// Continue training every parameter of `pretrained` on one subject with MSE.
pub fn finetune(
    pretrained: &Model,
    cohort: &ProcessedCohort,
    split: &SplitAssignment,
    subject: &str,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    pretrained.head_index(subject)?;
    let s = subject_index(cohort, subject)?;
    let mut model = pretrained.clone();
    let train = Dataset::for_subjects(&model, cohort, split, SplitLabel::Train, &[s])?;
    let val = Dataset::for_subjects(&model, cohort, split, SplitLabel::Val, &[s])?;

    let mut history = TrainHistory::new(LossKind::Mse);
    let mut best = Best::new();
    let all = |_: usize| true;
    let phase = Phase {
        epochs: 0..cfg.epochs,
        schedule: cfg.single_schedule,
        batch: cfg.single_batch,
        loss: LossKind::Mse,
        trainable: &all,
    };
    run_phase(
        &mut model,
        &mut optimizer(cfg),
        &train,
        &val,
        cfg,
        &phase,
        &mut history,
        &mut best,
    )?;
    best.restore(&mut model, &mut history);
    Ok((model, history))
}

/// Which parameter values changed during the head-only phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeCheck {
    /// Values that differ from the pretrained model (plus the new head's init).
    pub changed: usize,
    /// Of those, values outside the new subject's head.
    pub changed_outside_head: usize,
    pub head_len: usize,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub model: Model,
    pub history: TrainHistory,
    pub freeze: FreezeCheck,
}

/// Add a head for `subject`, train only it for `unfreeze_epoch` epochs, then
/// train everything until `epochs`.
pub fn transfer(
    pretrained: &Model,
    cohort: &ProcessedCohort,
    split: &SplitAssignment,
    subject: &str,
    cfg: &TrainConfig,
) -> Result<TransferOutcome> {
    cfg.validate()?;
    if cfg.unfreeze_epoch >= cfg.epochs {
        return Err(Error::invalid(format!(
            "unfreeze_epoch {} must be below epochs {}",
            cfg.unfreeze_epoch, cfg.epochs
        )));
    }
    if pretrained.config.ablate.rh {
        return Err(Error::invalid("transfer needs per-subject heads (rh ablation is set)"));
    }
    let s = subject_index(cohort, subject)?;
    let mut model = pretrained.clone();
    let head = model.add_subject(subject, derive_seed(cfg.seed, "transfer-head", 0))?;
    let start_values = model.params.values.clone();
    let head_range = model.head_range(head);
    let head_tensors: Vec<bool> = model
        .params
        .tensors
        .iter()
        .map(|t| head_range.contains(&t.offset))
        .collect();

    let train = Dataset::for_subjects(&model, cohort, split, SplitLabel::Train, &[s])?;
    let val = Dataset::for_subjects(&model, cohort, split, SplitLabel::Val, &[s])?;
    let mut opt = optimizer(cfg);
    let mut history = TrainHistory::new(LossKind::Huber);
    let mut best = Best::new();

    let head_only = |i: usize| head_tensors[i];
    let phase1 = Phase {
        epochs: 0..cfg.unfreeze_epoch,
        schedule: cfg.single_schedule,
        batch: cfg.single_batch,
        loss: LossKind::Huber,
        trainable: &head_only,
    };
    run_head_phase(
        &mut model,
        &mut opt,
        head,
        &train,
        &val,
        cfg,
        &phase1,
        &mut history,
        &mut best,
    )?;

    let mut freeze = FreezeCheck {
        changed: 0,
        changed_outside_head: 0,
        head_len: head_range.len(),
    };
    for (i, (a, b)) in model.params.values.iter().zip(&start_values).enumerate() {
        if a.to_bits() != b.to_bits() {
            freeze.changed += 1;
            if !head_range.contains(&i) {
                freeze.changed_outside_head += 1;
            }
        }
    }

    let all = |_: usize| true;
    let phase2 = Phase {
        epochs: cfg.unfreeze_epoch..cfg.epochs,
        trainable: &all,
        ..phase1
    };
    run_phase(
        &mut model,
        &mut opt,
        &train,
        &val,
        cfg,
        &phase2,
        &mut history,
        &mut best,
    )?;
    best.restore(&mut model, &mut history);
    Ok(TransferOutcome { model, history, freeze })
}

/// Scores of `model` on one cohort subject's `label` trials.
pub fn score_subject(
    model: &Model,
    cohort: &ProcessedCohort,
    split: &SplitAssignment,
    label: SplitLabel,
    subject: &str,
) -> Result<SubjectScore> {
    let s = subject_index(cohort, subject)?;
    let data = Dataset::for_subjects(model, cohort, split, label, &[s])?;
    let pred = model.predict(&data.inputs)?;
    Ok(SubjectScore {
        subject_id: subject.to_string(),
        r2: r2(&pred, &data.targets_ms)?,
        rmse_ms: rmse(&pred, &data.targets_ms)?,
        n_trials: data.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub subject_id: String,
    pub pretrain_subjects: Vec<String>,
    pub pretrain_best_epoch: usize,
    pub transfer_best_epoch: usize,
    pub freeze: FreezeCheck,
    pub test: SubjectScore,
}

/// For each held-out subject: pretrain on the rest with `pretrain`, transfer
/// with `transfer_cfg`, score on its test trials. `held_out = None` runs every
/// subject.
pub fn loo_workflow(
    config: &ModelConfig,
    cohort: &ProcessedCohort,
    split: &SplitAssignment,
    pretrain: &TrainConfig,
    transfer_cfg: &TrainConfig,
    held_out: Option<&[String]>,
) -> Result<Vec<LooReport>> {
    if cohort.subjects.len() < 3 {
        return Err(Error::invalid("leave-one-out needs at least 3 subjects"));
    }
    let targets: Vec<String> = match held_out {
        Some(ids) => ids.to_vec(),
        None => cohort.subjects.iter().map(|s| s.subject_id.clone()).collect(),
    };
    let mut reports = Vec::with_capacity(targets.len());
    for subject in &targets {
        let s = subject_index(cohort, subject)?;
        let rest: Vec<usize> = (0..cohort.subjects.len()).filter(|&i| i != s).collect();
        let ids: Vec<&str> = rest.iter().map(|&i| cohort.subjects[i].subject_id.as_str()).collect();
        let pre_cohort = cohort.select(&ids)?;
        if pre_cohort.subject_index(subject).is_some() {
            return Err(Error::invalid(format!(
                "pretraining set contains held-out subject {subject}"
            )));
        }
        let pre_split = split.subset(&rest)?;
        log::info!("loo: pretraining without {subject}");
        let (pre, pre_hist) = train(config, &pre_cohort, &pre_split, pretrain, Mode::MultiSubject)?;
        log::info!("loo: transferring to {subject}");
        let out = transfer(&pre, cohort, split, subject, transfer_cfg)?;
        let test = score_subject(&out.model, cohort, split, SplitLabel::Test, subject)?;
        reports.push(LooReport {
            subject_id: subject.clone(),
            pretrain_subjects: ids.iter().map(|s| s.to_string()).collect(),
            pretrain_best_epoch: pre_hist.best_epoch,
            transfer_best_epoch: out.history.best_epoch,
            freeze: out.freeze,
            test,
        });
    }
    Ok(reports)
}

/// Run `run(split_seed)` for split seeds `0..n_splits` and summarize each
/// named metric.
pub fn multi_split_average<F>(n_splits: usize, mut run: F) -> Result<Vec<(String, MeanSem)>>
where
    F: FnMut(u64) -> Result<Vec<(String, f64)>>,
{
    if n_splits == 0 {
        return Err(Error::invalid("n_splits must be at least 1"));
    }
    let mut names: Vec<String> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for seed in 0..n_splits as u64 {
        let metrics = run(seed)?;
        if seed == 0 {
            names = metrics.iter().map(|(n, _)| n.clone()).collect();
            values = vec![Vec::with_capacity(n_splits); names.len()];
        }
        if metrics.len() != names.len() || metrics.iter().zip(&names).any(|((a, _), b)| a != b) {
            return Err(Error::invalid("split runs returned different metric sets"));
        }
        for (v, (_, x)) in values.iter_mut().zip(metrics) {
            v.push(x);
        }
    }
    names
        .into_iter()
        .zip(values)
        .map(|(n, v)| Ok((n, mean_sem(&v)?)))
        .collect()
}
