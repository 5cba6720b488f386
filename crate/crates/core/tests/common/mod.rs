use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seegnet::cohort::ElectrodeMeta;
use seegnet::sigproc::{ProcessedCohort, ProcessedSubject, TRIAL_SAMPLES};

/// Processed cohort whose electrodes carry a Gaussian bump at a latency
/// proportional to each trial's response time, in unit-variance noise.
pub fn toy_cohort(n_subjects: usize, n_trials: usize, n_electrodes: usize, seed: u64) -> ProcessedCohort {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let subjects = (0..n_subjects)
        .map(|s| {
            let electrodes: Vec<ElectrodeMeta> = (0..n_electrodes)
                .map(|e| ElectrodeMeta {
                    id: format!("E{e}"),
                    mni: [
                        r.random_range(-90.0..90.0),
                        r.random_range(-120.0..90.0),
                        r.random_range(-70.0..80.0),
                    ],
                    selected: true,
                })
                .collect();
            let rts_ms: Vec<f64> = (0..n_trials).map(|_| r.random_range(300.0..700.0)).collect();
            let mut trials = Vec::with_capacity(n_trials * n_electrodes * TRIAL_SAMPLES);
            for rt in &rts_ms {
                for _ in 0..n_electrodes {
                    let center = rt * 0.4 * 0.8;
                    trials.extend((0..TRIAL_SAMPLES).map(|i| {
                        let d = (i as f64 - center) / 15.0;
                        (2.0 * (-0.5 * d * d).exp() + noise.sample(&mut r)) as f32
                    }));
                }
            }
            ProcessedSubject {
                subject_id: format!("S{s:02}"),
                electrodes,
                trials,
                rts_ms,
            }
        })
        .collect();
    ProcessedCohort {
        subjects,
        seed: Some(seed),
        provenance: "toy".into(),
    }
}
