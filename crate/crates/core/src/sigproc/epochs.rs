use crate::error::{Error, Result};

/// Selection window around the color change, ms.
pub const SELECTION_WINDOW_MS: (f64, f64) = (-500.0, 1500.0);
/// Decoding window around the color change, ms.
pub const DECODING_WINDOW_MS: (f64, f64) = (0.0, 1500.0);

/// Trials cut around an event: `data[trial][electrode][sample]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub n_trials: usize,
    pub n_electrodes: usize,
    pub n_samples: usize,
    pub window_ms: (f64, f64),
    pub sampling_rate: f64,
    pub data: Vec<f32>,
}

impl EpochSet {
    pub fn new(
        n_trials: usize,
        n_electrodes: usize,
        window_ms: (f64, f64),
        sampling_rate: f64,
        data: Vec<f32>,
    ) -> Result<Self> {
        let n_samples = window_samples(window_ms, sampling_rate);
        if data.len() != n_trials * n_electrodes * n_samples {
            return Err(Error::ShapeMismatch {
                context: "epoch set".into(),
                detail: format!(
                    "{} values for {n_trials} trials x {n_electrodes} electrodes x {n_samples} samples",
                    data.len()
                ),
            });
        }
        Ok(Self {
            n_trials,
            n_electrodes,
            n_samples,
            window_ms,
            sampling_rate,
            data,
        })
    }

    pub fn epoch(&self, trial: usize, electrode: usize) -> &[f32] {
        let start = (trial * self.n_electrodes + electrode) * self.n_samples;
        &self.data[start..start + self.n_samples]
    }

    /// `[trials × samples]` view of one electrode, widened to `f64`.
    pub fn electrode(&self, electrode: usize) -> Vec<Vec<f64>> {
        (0..self.n_trials)
            .map(|t| self.epoch(t, electrode).iter().map(|&v| v as f64).collect())
            .collect()
    }
}

pub fn window_samples(window_ms: (f64, f64), rate: f64) -> usize {
    ((window_ms.1 - window_ms.0) / 1000.0 * rate).round() as usize
}

/// First sample of the window for an event at sample `event` (at `rate`), or
/// `None` if the window does not fit inside `len` samples.
pub fn window_start(event: f64, window_ms: (f64, f64), rate: f64, len: usize) -> Option<usize> {
    let start = (event + window_ms.0 / 1000.0 * rate).round();
    let n = window_samples(window_ms, rate);
    (start >= 0.0 && start as usize + n <= len).then_some(start as usize)
}
