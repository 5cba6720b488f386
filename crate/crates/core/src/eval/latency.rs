use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, TrialInput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub n_warm: usize,
    pub n_meas: usize,
}

impl LatencyStats {
    /// Order statistics of raw timings; p95 is the nearest-rank value.
    pub fn from_samples(samples_ms: &[f64], n_warm: usize) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::invalid("no latency samples"));
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(Self {
            median_ms: median,
            p95_ms: s[rank - 1],
            min_ms: s[0],
            max_ms: s[n - 1],
            n_warm,
            n_meas: n,
        })
    }
}

/// Wall-clock of single-trial eval-mode forward passes after `n_warm`
/// untimed runs.
pub fn measure_latency(model: &Model, trial: &TrialInput, n_warm: usize, n_meas: usize) -> Result<LatencyStats> {
    if n_meas == 0 {
        return Err(Error::invalid("n_meas must be positive"));
    }
    let batch = std::slice::from_ref(trial);
    for _ in 0..n_warm {
        std::hint::black_box(model.predict(batch)?);
    }
    let mut samples = Vec::with_capacity(n_meas);
    for _ in 0..n_meas {
        let start = Instant::now();
        std::hint::black_box(model.predict(batch)?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    LatencyStats::from_samples(&samples, n_warm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistics() {
        let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let s = LatencyStats::from_samples(&v, 0).unwrap();
        assert_eq!((s.median_ms, s.p95_ms, s.min_ms, s.max_ms), (50.5, 95.0, 1.0, 100.0));
        let s = LatencyStats::from_samples(&[3.0], 0).unwrap();
        assert_eq!((s.median_ms, s.p95_ms), (3.0, 3.0));
        assert!(LatencyStats::from_samples(&[], 0).is_err());
    }

    #[test]
    fn measured_p95_not_below_median() {
        let cfg = crate::model::ModelConfig {
            e_max: 4,
            ..Default::default()
        };
        let m = Model::<f32>::new(cfg, vec!["a".into()], 0).unwrap();
        let sig: Vec<f32> = (0..600).map(|i| (i as f32 * 0.05).sin()).collect();
        let trial = TrialInput {
            head: 0,
            electrodes: vec![crate::model::ElectrodeInput {
                slot: 0,
                signal: &sig,
                mni: [0.0; 3],
            }],
        };
        let s = measure_latency(&m, &trial, 2, 11).unwrap();
        assert!(s.p95_ms >= s.median_ms && s.median_ms >= s.min_ms && s.min_ms > 0.0);
        assert_eq!((s.n_warm, s.n_meas), (2, 11));
    }
}
