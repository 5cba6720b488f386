use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// Per-subject trial labels. `labels[s][t]` labels trial `t` of subject `s`,
/// trials ordered session by session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub labels: Vec<Vec<SplitLabel>>,
}

impl SplitAssignment {
    pub fn indices(&self, subject: usize, label: SplitLabel) -> Vec<usize> {
        self.labels[subject]
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, subject: usize, label: SplitLabel) -> usize {
        self.labels[subject].iter().filter(|l| **l == label).count()
    }

    /// The labels of the listed subjects, in that order.
    pub fn subset(&self, subjects: &[usize]) -> Result<Self> {
        let labels = subjects
            .iter()
            .map(|&s| {
                self.labels
                    .get(s)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("subject #{s} not in split")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            seed: self.seed,
            labels,
        })
    }
}

/// Anything whose trials can be split per subject.
pub trait TrialCounts {
    fn trial_counts(&self) -> Vec<usize>;
}

impl TrialCounts for Cohort {
    fn trial_counts(&self) -> Vec<usize> {
        self.subjects.iter().map(|s| s.n_trials()).collect()
    }
}

/// Stratified (per subject) 70/15/15-style split.
pub fn split_trials<C: TrialCounts + ?Sized>(data: &C, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    split_counts(&data.trial_counts(), ratios, seed)
}

pub fn split_counts(counts: &[usize], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let total = ratios.train + ratios.val + ratios.test;
    if [ratios.train, ratios.val, ratios.test].iter().any(|r| !(*r >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut labels = Vec::with_capacity(counts.len());
    for (s, &n) in counts.iter().enumerate() {
        if n < 7 {
            return Err(Error::invalid(format!(
                "subject #{s} has {n} trials; at least 7 are needed to split"
            )));
        }
        let n_train = (ratios.train * n as f64).round() as usize;
        let n_val = ((ratios.val * n as f64).round() as usize).min(n - n_train);
        let n_test = n - n_train - n_val;

        let mut subject_labels: Vec<SplitLabel> = std::iter::repeat_n(SplitLabel::Train, n_train)
            .chain(std::iter::repeat_n(SplitLabel::Val, n_val))
            .chain(std::iter::repeat_n(SplitLabel::Test, n_test))
            .collect();
        subject_labels.shuffle(&mut rng::stream(seed, "split", s as u64));
        labels.push(subject_labels);
    }
    Ok(SplitAssignment { seed, labels })
}
