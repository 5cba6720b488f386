use std::path::Path;

use crate::cohort::{
    load_bundle, write_bundle, Cohort, ElectrodeMeta, Session, SignalMatrix, Subject, TrialCounts, TrialEvent,
};
use crate::error::{Error, Result};

pub const PROCESSED_RATE_HZ: f64 = 400.0;
pub const TRIAL_SAMPLES: usize = 600;
const PROCESSED_TAG: &str = "processed";
const PROCESSED_SESSION: &str = "processed";

/// One subject's decoding data: z-scored broadband epochs of the selected
/// electrodes, `trials[t][e][s]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSubject {
    pub subject_id: String,
    pub electrodes: Vec<ElectrodeMeta>,
    pub trials: Vec<f32>,
    pub rts_ms: Vec<f64>,
}

impl ProcessedSubject {
    pub fn n_trials(&self) -> usize {
        self.rts_ms.len()
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrodes.len()
    }

    /// `[electrodes × samples]` block of trial `t`.
    pub fn trial(&self, t: usize) -> &[f32] {
        let w = self.n_electrodes() * TRIAL_SAMPLES;
        &self.trials[t * w..(t + 1) * w]
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = format!("processed subject {}", self.subject_id);
        if self.electrodes.is_empty() {
            return Err(Error::invalid(format!("{ctx} has no electrodes")));
        }
        if self.trials.len() != self.n_trials() * self.n_electrodes() * TRIAL_SAMPLES {
            return Err(Error::ShapeMismatch {
                context: ctx,
                detail: format!(
                    "{} samples for {} trials x {} electrodes x {TRIAL_SAMPLES}",
                    self.trials.len(),
                    self.n_trials(),
                    self.n_electrodes()
                ),
            });
        }
        if self.trials.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: ctx });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProcessedCohort {
    pub subjects: Vec<ProcessedSubject>,
    pub seed: Option<u64>,
    pub provenance: String,
}

impl TrialCounts for ProcessedCohort {
    fn trial_counts(&self) -> Vec<usize> {
        self.subjects.iter().map(ProcessedSubject::n_trials).collect()
    }
}

impl ProcessedCohort {
    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.subject_id == id)
    }

    pub fn max_electrodes(&self) -> usize {
        self.subjects
            .iter()
            .map(ProcessedSubject::n_electrodes)
            .max()
            .unwrap_or(0)
    }

    /// Copy restricted to the listed subjects, in the given order.
    pub fn select(&self, ids: &[&str]) -> Result<Self> {
        let subjects = ids
            .iter()
            .map(|id| {
                self.subject_index(id)
                    .map(|i| self.subjects[i].clone())
                    .ok_or_else(|| Error::UnknownSubject(id.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            subjects,
            seed: self.seed,
            provenance: self.provenance.clone(),
        })
    }

    /// Store as a regular bundle: one 400 Hz session per subject whose signal
    /// is the trials laid end to end, with event `i` at sample `600·i`.
    pub fn to_cohort(&self) -> Cohort {
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let (n, e) = (s.n_trials(), s.n_electrodes());
                let mut signals = SignalMatrix::zeros(e, n * TRIAL_SAMPLES);
                for t in 0..n {
                    let trial = s.trial(t);
                    for ei in 0..e {
                        signals.row_mut(ei)[t * TRIAL_SAMPLES..(t + 1) * TRIAL_SAMPLES]
                            .copy_from_slice(&trial[ei * TRIAL_SAMPLES..(ei + 1) * TRIAL_SAMPLES]);
                    }
                }
                let events = s
                    .rts_ms
                    .iter()
                    .enumerate()
                    .map(|(i, &rt_ms)| TrialEvent {
                        stim_onset: i * TRIAL_SAMPLES,
                        color_change: i * TRIAL_SAMPLES,
                        rt_ms,
                    })
                    .collect();
                Subject {
                    subject_id: s.subject_id.clone(),
                    electrodes: s.electrodes.clone(),
                    sessions: vec![Session {
                        session_id: PROCESSED_SESSION.into(),
                        subject_id: s.subject_id.clone(),
                        sampling_rate: PROCESSED_RATE_HZ,
                        signals,
                        events,
                    }],
                }
            })
            .collect();
        Cohort {
            subjects,
            seed: self.seed,
            provenance: format!("{PROCESSED_TAG}; {}", self.provenance),
        }
    }

    pub fn from_cohort(cohort: &Cohort) -> Result<Self> {
        let provenance = cohort
            .provenance
            .strip_prefix(PROCESSED_TAG)
            .map(|p| p.trim_start_matches("; ").to_string())
            .ok_or_else(|| Error::invalid("bundle is not a processed cohort (run `preprocess` first)"))?;
        let subjects = cohort
            .subjects
            .iter()
            .map(|s| {
                let ctx = |msg: String| Error::invalid(format!("processed subject {}: {msg}", s.subject_id));
                let [ses] = s.sessions.as_slice() else {
                    return Err(ctx(format!("expected one session, found {}", s.sessions.len())));
                };
                if ses.sampling_rate != PROCESSED_RATE_HZ {
                    return Err(ctx(format!(
                        "sampling rate {} Hz, expected {PROCESSED_RATE_HZ} Hz",
                        ses.sampling_rate
                    )));
                }
                let n = ses.events.len();
                if ses.n_samples() != n * TRIAL_SAMPLES
                    || ses
                        .events
                        .iter()
                        .enumerate()
                        .any(|(i, ev)| ev.color_change != i * TRIAL_SAMPLES)
                {
                    return Err(ctx(format!(
                        "trials are not laid out as consecutive {TRIAL_SAMPLES}-sample epochs"
                    )));
                }
                let e = s.electrodes.len();
                let mut trials = vec![0f32; n * e * TRIAL_SAMPLES];
                for t in 0..n {
                    for ei in 0..e {
                        let dst = (t * e + ei) * TRIAL_SAMPLES;
                        trials[dst..dst + TRIAL_SAMPLES]
                            .copy_from_slice(&ses.signals.row(ei)[t * TRIAL_SAMPLES..(t + 1) * TRIAL_SAMPLES]);
                    }
                }
                let p = ProcessedSubject {
                    subject_id: s.subject_id.clone(),
                    electrodes: s.electrodes.clone(),
                    trials,
                    rts_ms: ses.events.iter().map(|ev| ev.rt_ms).collect(),
                };
                p.validate()?;
                Ok(p)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            subjects,
            seed: cohort.seed,
            provenance,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bundle(&self.to_cohort(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_cohort(&load_bundle(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ProcessedCohort {
        let e = 2;
        let n = 3;
        ProcessedCohort {
            subjects: vec![ProcessedSubject {
                subject_id: "S00".into(),
                electrodes: vec![
                    ElectrodeMeta::new("a", [1.0, 2.0, 3.0]),
                    ElectrodeMeta::new("b", [0.0; 3]),
                ],
                trials: (0..n * e * TRIAL_SAMPLES).map(|i| (i as f32 * 0.01).sin()).collect(),
                rts_ms: vec![300.0, 410.5, 512.25],
            }],
            seed: Some(4),
            provenance: "unit".into(),
        }
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = tiny();
        p.write(dir.path()).unwrap();
        assert_eq!(ProcessedCohort::load(dir.path()).unwrap(), p);
    }

    #[test]
    fn raw_bundle_is_not_processed() {
        let mut c = tiny().to_cohort();
        c.provenance = "synthetic".into();
        assert!(ProcessedCohort::from_cohort(&c).is_err());
        let mut c = tiny().to_cohort();
        c.subjects[0].sessions[0].sampling_rate = 512.0;
        assert!(ProcessedCohort::from_cohort(&c).is_err());
    }
}
