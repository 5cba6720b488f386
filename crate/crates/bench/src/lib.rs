//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seegnet::model::{ElectrodeInput, TrialInput};
use seegnet::sigproc::EpochSet;

/// Deterministic per-electrode signals and MNI coordinates for one trial.
pub struct TrialFixture {
    pub signals: Vec<Vec<f32>>,
    pub mni: Vec<[f64; 3]>,
}

impl TrialFixture {
    pub fn new(n_electrodes: usize, n_samples: usize, seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Self {
            signals: (0..n_electrodes)
                .map(|_| (0..n_samples).map(|_| r.random_range(-2.0..2.0)).collect())
                .collect(),
            mni: (0..n_electrodes)
                .map(|_| {
                    [
                        r.random_range(-70.0..70.0),
                        r.random_range(-100.0..70.0),
                        r.random_range(-50.0..70.0),
                    ]
                })
                .collect(),
        }
    }

    pub fn input(&self, head: usize) -> TrialInput<'_> {
        TrialInput {
            head,
            electrodes: self
                .signals
                .iter()
                .zip(&self.mni)
                .enumerate()
                .map(|(slot, (signal, &mni))| ElectrodeInput { slot, signal, mni })
                .collect(),
        }
    }
}

/// Uniform-noise envelope epochs for the bootstrap test.
pub fn noise_epochs(n_trials: usize, n_electrodes: usize, rate: f64, seed: u64) -> EpochSet {
    let window = seegnet::sigproc::SELECTION_WINDOW_MS;
    let n = seegnet::sigproc::window_samples(window, rate);
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_trials * n_electrodes * n).map(|_| r.random::<f32>()).collect();
    EpochSet::new(n_trials, n_electrodes, window, rate, data).expect("consistent epoch shape")
}
