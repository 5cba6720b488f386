use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{LossKind, StepSchedule, TrainConfig};
use super::loss::sample_loss;
use super::optim::AdamW;
use crate::cohort::{SplitAssignment, SplitLabel};
use crate::error::{Error, Result};
use crate::model::{cohort_inputs, Model, TrialInput};
use crate::rng;
use crate::sigproc::ProcessedCohort;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: LossKind,
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (lowest validation loss).
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    pub fn new(loss: LossKind) -> Self {
        Self {
            loss,
            records: Vec::new(),
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loss sequences only, for determinism checks (wall-clock excluded).
    pub fn losses(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.train_loss, r.val_loss)).collect()
    }
}

/// Model inputs with response times in ms.
#[derive(Debug, Clone)]
pub struct Dataset<'a> {
    pub inputs: Vec<TrialInput<'a>>,
    pub targets_ms: Vec<f64>,
}

impl<'a> Dataset<'a> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Trials of `label` for every cohort subject, subject by subject.
    pub fn from_split(
        model: &Model,
        cohort: &'a ProcessedCohort,
        split: &SplitAssignment,
        label: SplitLabel,
    ) -> Result<Self> {
        Self::for_subjects(
            model,
            cohort,
            split,
            label,
            &(0..cohort.subjects.len()).collect::<Vec<_>>(),
        )
    }

    pub fn for_subjects(
        model: &Model,
        cohort: &'a ProcessedCohort,
        split: &SplitAssignment,
        label: SplitLabel,
        subjects: &[usize],
    ) -> Result<Self> {
        if split.labels.len() != cohort.subjects.len() {
            return Err(Error::ShapeMismatch {
                context: "split".into(),
                detail: format!(
                    "{} subjects in split, {} in cohort",
                    split.labels.len(),
                    cohort.subjects.len()
                ),
            });
        }
        let mut picks = Vec::new();
        for &s in subjects {
            if split.labels[s].len() != cohort.subjects[s].n_trials() {
                return Err(Error::ShapeMismatch {
                    context: format!("split of {}", cohort.subjects[s].subject_id),
                    detail: format!(
                        "{} labels for {} trials",
                        split.labels[s].len(),
                        cohort.subjects[s].n_trials()
                    ),
                });
            }
            picks.extend(split.indices(s, label).into_iter().map(|t| (s, t)));
        }
        Ok(Self {
            inputs: cohort_inputs(model, cohort, &picks)?,
            targets_ms: picks.iter().map(|&(s, t)| cohort.subjects[s].rts_ms[t]).collect(),
        })
    }
}

/// One stretch of epochs with fixed trainable set and objective.
pub(crate) struct Phase<'f> {
    pub epochs: std::ops::Range<usize>,
    pub schedule: StepSchedule,
    pub batch: usize,
    pub loss: LossKind,
    pub trainable: &'f dyn Fn(usize) -> bool,
}

/// Keeps the best-validation parameters seen so far.
pub(crate) struct Best {
    pub val_loss: f64,
    pub epoch: usize,
    pub values: Option<Vec<f32>>,
}

impl Best {
    pub fn new() -> Self {
        Self {
            val_loss: f64::INFINITY,
            epoch: 0,
            values: None,
        }
    }

    fn offer(&mut self, model: &Model, epoch: usize, val_loss: f64) {
        if val_loss < self.val_loss {
            self.val_loss = val_loss;
            self.epoch = epoch;
            self.values = Some(model.params.values.clone());
        }
    }

    pub fn restore(self, model: &mut Model, history: &mut TrainHistory) {
        if let Some(v) = self.values {
            model.params.values = v;
            history.best_epoch = self.epoch;
            history.best_val_loss = self.val_loss;
        }
    }
}

fn std_targets(model: &Model, ms: &[f64]) -> Vec<f32> {
    ms.iter().map(|t| model.scaler.to_std(*t) as f32).collect()
}

fn check_finite(epoch: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            detail: format!("{what} is {v}"),
        })
    }
}

fn shuffled(n: usize, seed: u64, tag: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, tag, epoch as u64));
    order
}

fn eval_loss(model: &Model, data: &Dataset, loss: LossKind, delta: f64) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let f = sample_loss::<f32>(loss, delta);
    let pred = model.predict_std(&data.inputs)?;
    let y = std_targets(model, &data.targets_ms);
    Ok(pred.iter().zip(&y).map(|(p, t)| f(*p, *t).0 as f64).sum::<f64>() / data.len() as f64)
}

/// Full-network epochs: train-mode batch norm, shuffled mini-batches.
pub(crate) fn run_phase(
    model: &mut Model,
    opt: &mut AdamW,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    phase: &Phase,
    history: &mut TrainHistory,
    best: &mut Best,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let y = std_targets(model, &train.targets_ms);
    let f = sample_loss::<f32>(phase.loss, cfg.huber_delta);
    for epoch in phase.epochs.clone() {
        let start = Instant::now();
        let lr = phase.schedule.lr(cfg.lr, epoch);
        let order = shuffled(train.len(), cfg.seed, "shuffle", epoch);
        let mut total = 0.0;
        for idx in order.chunks(phase.batch) {
            let inputs: Vec<TrialInput> = idx.iter().map(|&i| train.inputs[i].clone()).collect();
            let targets: Vec<f32> = idx.iter().map(|&i| y[i]).collect();
            let g = model.gradients(&inputs, &targets, f, true)?;
            check_finite(epoch, "training loss", g.loss)?;
            total += g.loss * idx.len() as f64;
            if let Some((mean, var)) = &g.batch_stats {
                model.update_running_stats(mean, var);
            }
            opt.step(&mut model.params, &g.grads, lr, phase.trainable);
        }
        finish_epoch(
            model,
            val,
            cfg,
            phase.loss,
            epoch,
            total / train.len() as f64,
            lr,
            start,
            history,
            best,
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch(
    model: &Model,
    val: &Dataset,
    cfg: &TrainConfig,
    loss: LossKind,
    epoch: usize,
    train_loss: f64,
    lr: f64,
    start: Instant,
    history: &mut TrainHistory,
    best: &mut Best,
) -> Result<()> {
    let val_loss = if val.is_empty() {
        train_loss
    } else {
        eval_loss(model, val, loss, cfg.huber_delta)?
    };
    check_finite(epoch, "validation loss", val_loss)?;
    best.offer(model, epoch, val_loss);
    history.records.push(EpochRecord {
        epoch,
        train_loss,
        val_loss,
        lr,
        seconds: start.elapsed().as_secs_f64(),
    });
    log::debug!("epoch {epoch} train {train_loss:.5} val {val_loss:.5} lr {lr:.3e}");
    Ok(())
}

/// Head-only epochs on cached eval-mode trunk features; the trunk (including
/// batch-norm running statistics) is not touched.
pub(crate) fn run_head_phase(
    model: &mut Model,
    opt: &mut AdamW,
    head: usize,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    phase: &Phase,
    history: &mut TrainHistory,
    best: &mut Best,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if train.inputs.iter().chain(&val.inputs).any(|t| t.head != head) {
        return Err(Error::invalid("head-only phase expects trials of a single head"));
    }
    let feats = model.features(&train.inputs)?;
    let val_feats = model.features(&val.inputs)?;
    let y = std_targets(model, &train.targets_ms);
    let val_y = std_targets(model, &val.targets_ms);
    let f = sample_loss::<f32>(phase.loss, cfg.huber_delta);
    let n_params = model.params.len();
    for epoch in phase.epochs.clone() {
        let start = Instant::now();
        let lr = phase.schedule.lr(cfg.lr, epoch);
        let order = shuffled(train.len(), cfg.seed, "shuffle", epoch);
        let mut total = 0.0;
        for idx in order.chunks(phase.batch) {
            let mut grads = vec![0f32; n_params];
            let inv_b = 1.0 / idx.len() as f32;
            let mut batch_loss = 0.0;
            for &i in idx {
                let (pred, hpre) = model.head_forward(head, &feats[i]);
                let (l, dl) = f(pred, y[i]);
                batch_loss += l as f64;
                model.head_backward(head, &feats[i], &hpre, dl * inv_b, &mut grads);
            }
            check_finite(epoch, "training loss", batch_loss)?;
            total += batch_loss;
            opt.step(&mut model.params, &grads, lr, phase.trainable);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            val_feats
                .iter()
                .zip(&val_y)
                .map(|(x, t)| f(model.head_forward(head, x).0, *t).0 as f64)
                .sum::<f64>()
                / val.len() as f64
        };
        check_finite(epoch, "validation loss", val_loss)?;
        best.offer(model, epoch, val_loss);
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(())
}
