use super::epochs::EpochSet;

/// Minimum run of samples pinned at the rail that counts as saturation.
pub const SATURATION_RUN: usize = 32;
/// A trial is an outlier if `|mean| + SD` exceeds this multiple of the
/// across-trial average of the same quantity.
pub const AMPLITUDE_FACTOR: f64 = 10.0;

/// Per-trial rejection mask (`true` = reject). A trial is rejected if, on any
/// electrode with `retained[e]` (all electrodes when `None`), it contains a run
/// of at least [`SATURATION_RUN`] samples equal in magnitude to that
/// electrode's maximum absolute value, or its `|mean| + SD` exceeds
/// [`AMPLITUDE_FACTOR`] times the across-trial mean.
pub fn reject_bad_trials(epochs: &EpochSet, retained: Option<&[bool]>) -> Vec<bool> {
    let mut reject = vec![false; epochs.n_trials];
    if epochs.n_trials < 2 {
        return reject;
    }
    for e in 0..epochs.n_electrodes {
        if retained.is_some_and(|r| !r[e]) {
            continue;
        }
        let rail = (0..epochs.n_trials)
            .flat_map(|t| epochs.epoch(t, e).iter())
            .fold(0f32, |m, v| m.max(v.abs()));
        if rail > 0.0 {
            for (t, flag) in reject.iter_mut().enumerate() {
                let mut run = 0;
                for v in epochs.epoch(t, e) {
                    run = if v.abs() == rail { run + 1 } else { 0 };
                    if run >= SATURATION_RUN {
                        *flag = true;
                        break;
                    }
                }
            }
        }

        let spread: Vec<f64> = (0..epochs.n_trials)
            .map(|t| {
                let x = epochs.epoch(t, e);
                let n = x.len() as f64;
                let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
                mean.abs() + var.sqrt()
            })
            .collect();
        let avg = spread.iter().sum::<f64>() / spread.len() as f64;
        for (flag, s) in reject.iter_mut().zip(&spread) {
            if *s > AMPLITUDE_FACTOR * avg {
                *flag = true;
            }
        }
    }
    reject
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise_epochs(n_trials: usize, n_elec: usize, seed: u64) -> EpochSet {
        let mut r = crate::rng::stream(seed, "test", 0);
        let n = 256;
        let data = (0..n_trials * n_elec * n)
            .map(|_| r.sample::<f32, _>(StandardNormal))
            .collect();
        EpochSet::new(n_trials, n_elec, (-500.0, 1500.0), 128.0, data).unwrap()
    }

    #[test]
    fn scaled_trial_is_rejected() {
        let mut ep = noise_epochs(30, 3, 1);
        let n = ep.n_samples;
        let start = (7 * ep.n_electrodes + 1) * n;
        for v in &mut ep.data[start..start + n] {
            *v *= 100.0;
        }
        let r = reject_bad_trials(&ep, None);
        assert_eq!(r.iter().filter(|x| **x).count(), 1);
        assert!(r[7]);
        assert!(!reject_bad_trials(&ep, Some(&[true, false, true]))[7]);
    }

    #[test]
    fn identical_trials_are_kept() {
        let one = noise_epochs(1, 2, 3);
        let mut data = Vec::new();
        for _ in 0..10 {
            data.extend_from_slice(&one.data);
        }
        let ep = EpochSet::new(10, 2, one.window_ms, one.sampling_rate, data).unwrap();
        assert!(reject_bad_trials(&ep, None).iter().all(|x| !x));
    }

    #[test]
    fn clipped_segment_is_saturation() {
        let mut ep = noise_epochs(20, 2, 5);
        let n = ep.n_samples;
        let rail = ep.data.iter().fold(0f32, |m, v| m.max(v.abs())) * 1.01;
        let start = (4 * ep.n_electrodes) * n + 100;
        for v in &mut ep.data[start..start + 50] {
            *v = rail;
        }
        let r = reject_bad_trials(&ep, None);
        assert!(r[4]);
        assert_eq!(r.iter().filter(|x| **x).count(), 1);

        // A shorter clipped run is not saturation.
        let mut ep = noise_epochs(20, 2, 5);
        for v in &mut ep.data[start..start + SATURATION_RUN - 1] {
            *v = rail;
        }
        assert!(!reject_bad_trials(&ep, None)[4]);
    }
}
