use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SingleSubject,
    MultiSubject,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single_subject" => Ok(Self::SingleSubject),
            "multi" | "multi_subject" => Ok(Self::MultiSubject),
            other => Err(Error::invalid(format!(
                "unknown training mode {other:?} (single | multi)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Huber,
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Huber => "huber",
            Self::Mse => "mse",
        })
    }
}

/// Step decay: `lr(e) = lr₀ · gamma^⌊e / period⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub gamma: f64,
    pub period: usize,
}

impl StepSchedule {
    pub fn lr(&self, lr0: f64, epoch: usize) -> f64 {
        lr0 * self.gamma.powi((epoch / self.period) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub single_schedule: StepSchedule,
    pub multi_schedule: StepSchedule,
    pub single_batch: usize,
    pub multi_batch: usize,
    pub huber_delta: f64,
    /// Transfer only: epochs during which just the new head trains.
    pub unfreeze_epoch: usize,
    pub seed: u64,
    pub n_splits: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            single_schedule: StepSchedule {
                gamma: 0.5,
                period: 200,
            },
            multi_schedule: StepSchedule {
                gamma: 0.9,
                period: 100,
            },
            single_batch: 64,
            multi_batch: 1024,
            huber_delta: 1.0,
            unfreeze_epoch: 400,
            seed: 0,
            n_splits: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("train config: {m}")));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("betas must lie in [0, 1) and adam_eps must be positive");
        }
        if !(self.weight_decay >= 0.0) || !(self.huber_delta > 0.0) {
            return bad("weight_decay must be non-negative and huber_delta positive");
        }
        if self.single_batch == 0 || self.multi_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if self.single_schedule.period == 0 || self.multi_schedule.period == 0 {
            return bad("schedule periods must be positive");
        }
        if self.n_splits == 0 {
            return bad("n_splits must be at least 1");
        }
        Ok(())
    }

    pub fn schedule(&self, mode: Mode) -> StepSchedule {
        match mode {
            Mode::SingleSubject => self.single_schedule,
            Mode::MultiSubject => self.multi_schedule,
        }
    }

    pub fn batch(&self, mode: Mode) -> usize {
        match mode {
            Mode::SingleSubject => self.single_batch,
            Mode::MultiSubject => self.multi_batch,
        }
    }
}
