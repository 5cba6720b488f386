//! Task-modulation statistic, its label-shuffling bootstrap, and
//! Benjamini–Hochberg adjustment.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::rng;

/// The selection window is split into this many equal blocks; the first is
/// the baseline, the rest are the task period.
pub const N_BLOCKS: usize = 4;
pub const MIN_BOOTSTRAP_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnrResult {
    /// `+inf` when the baseline median course is constant.
    pub snr: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub selected: bool,
}

fn median(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let (lower, mid, _) = buf.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *mid;
    if n % 2 == 1 {
        hi
    } else {
        let lo = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn ratio(task_var: f64, base_var: f64) -> f64 {
    if base_var > 0.0 {
        task_var / base_var
    } else {
        f64::INFINITY
    }
}

/// Pointwise median across trials, then variance over time; task over baseline.
/// `task[t]` and `baseline[t]` are trial `t`'s envelope in each period.
pub fn snr_statistic(task: &[Vec<f64>], baseline: &[Vec<f64>]) -> Result<f64> {
    if task.len() < 2 || task.len() != baseline.len() {
        return Err(Error::invalid(
            "snr needs at least 2 trials with both task and baseline periods",
        ));
    }
    let course = |trials: &[Vec<f64>]| -> Result<Vec<f64>> {
        let n = trials[0].len();
        if n == 0 || trials.iter().any(|t| t.len() != n) {
            return Err(Error::invalid(
                "snr periods must be non-empty and equally long across trials",
            ));
        }
        let mut buf = vec![0.0; trials.len()];
        Ok((0..n)
            .map(|i| {
                for (b, t) in buf.iter_mut().zip(trials) {
                    *b = t[i];
                }
                median(&mut buf)
            })
            .collect())
    };
    let (tc, bc) = (course(task)?, course(baseline)?);
    let snr = ratio(variance(&tc), variance(&bc));
    if snr.is_infinite() {
        log::warn!("baseline median envelope is constant; snr reported as +inf");
    }
    Ok(snr)
}

/// Split a selection-window epoch into baseline (first block) and task (rest).
pub fn split_periods(trials: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = trials.first().map_or(0, Vec::len);
    let l = n / N_BLOCKS;
    let task = trials.iter().map(|t| t[l..N_BLOCKS * l].to_vec()).collect();
    let base = trials.iter().map(|t| t[..l].to_vec()).collect();
    (task, base)
}

/// SNR with every trial's blocks cyclically rotated by `rot[t]`: block
/// `rot[t]` becomes the baseline and the following three the task period.
fn rotated_snr(trials: &[Vec<f64>], rot: &[usize], l: usize, buf: &mut [f64], course: &mut [f64]) -> f64 {
    for pos in 0..N_BLOCKS {
        for tau in 0..l {
            for ((b, t), r) in buf.iter_mut().zip(trials).zip(rot) {
                *b = t[((r + pos) % N_BLOCKS) * l + tau];
            }
            course[pos * l + tau] = median(buf);
        }
    }
    ratio(variance(&course[l..]), variance(&course[..l]))
}

/// Per-electrode p-values for the SNR statistic against a label-shuffling
/// null. Each epoch spans the selection window and is cut into four equal
/// blocks (baseline + three task blocks). A null draw picks, independently per
/// trial, which block plays the baseline (cyclic rotation). `p` is the
/// fraction of draws whose SNR is at least the observed one, so a statistic
/// beyond every draw gets `p = 0`, meaning `p < 1 / n_iter`.
pub fn bootstrap_test(epochs: &EpochSet, n_iter: usize, seed: u64) -> Result<Vec<f64>> {
    if n_iter < MIN_BOOTSTRAP_ITER {
        return Err(Error::invalid(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_ITER} iterations, got {n_iter}"
        )));
    }
    if epochs.n_trials < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 trials"));
    }
    if epochs.n_samples % N_BLOCKS != 0 || epochs.n_samples == 0 {
        return Err(Error::invalid(format!(
            "epoch length {} is not divisible into {N_BLOCKS} equal blocks",
            epochs.n_samples
        )));
    }
    let l = epochs.n_samples / N_BLOCKS;
    (0..epochs.n_electrodes)
        .into_par_iter()
        .map(|e| {
            let trials = epochs.electrode(e);
            let (task, base) = split_periods(&trials);
            let observed = snr_statistic(&task, &base)?;
            let mut r = rng::stream(seed, "bootstrap", e as u64);
            let mut rot = vec![0usize; trials.len()];
            let mut buf = vec![0.0; trials.len()];
            let mut course = vec![0.0; epochs.n_samples];
            let mut hits = 0usize;
            for _ in 0..n_iter {
                for x in rot.iter_mut() {
                    *x = r.random_range(0..N_BLOCKS);
                }
                if rotated_snr(&trials, &rot, l, &mut buf, &mut course) >= observed {
                    hits += 1;
                }
            }
            Ok(hits as f64 / n_iter as f64)
        })
        .collect()
}

/// Benjamini–Hochberg step-up adjustment. Returns adjusted p-values (monotone
/// in the raw p, capped at 1) and the rejection mask `adjusted < alpha`.
pub fn bh_fdr(p: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    if p.is_empty() {
        return Err(Error::invalid("no p-values to adjust"));
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p[i] * (m as f64 / (rank + 1) as f64));
        adjusted[i] = running;
    }
    let reject = adjusted.iter().map(|a| *a < alpha).collect();
    Ok((adjusted, reject))
}
