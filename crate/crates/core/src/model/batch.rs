//! Padded trial batches and their conversion to model inputs.

use super::network::{ElectrodeInput, TrialInput};
use super::Model;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::sigproc::{ProcessedCohort, TRIAL_SAMPLES};

/// Padded batch: `voltages[b][e][t]` with `mask[b][e]` marking present
/// electrodes. Padded slots hold zeros and are never read by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBatch {
    pub e_max: usize,
    pub n_samples: usize,
    pub voltages: Vec<f32>,
    pub mask: Vec<bool>,
    pub mni: Vec<[f64; 3]>,
    pub subjects: Vec<String>,
    /// Response times in ms.
    pub targets: Vec<f64>,
}

/// `(subject index, trial index)` into a [`ProcessedCohort`].
pub type TrialRef = (usize, usize);

impl TrialBatch {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn from_processed(cohort: &ProcessedCohort, picks: &[TrialRef], e_max: usize) -> Result<Self> {
        let n = TRIAL_SAMPLES;
        let mut b = TrialBatch {
            e_max,
            n_samples: n,
            voltages: vec![0.0; picks.len() * e_max * n],
            mask: vec![false; picks.len() * e_max],
            mni: vec![[0.0; 3]; picks.len() * e_max],
            subjects: Vec::with_capacity(picks.len()),
            targets: Vec::with_capacity(picks.len()),
        };
        for (i, &(s, t)) in picks.iter().enumerate() {
            let subj = cohort
                .subjects
                .get(s)
                .ok_or_else(|| Error::invalid(format!("subject #{s} out of range")))?;
            if t >= subj.n_trials() {
                return Err(Error::invalid(format!(
                    "trial {t} out of range for {}",
                    subj.subject_id
                )));
            }
            if subj.n_electrodes() > e_max {
                return Err(Error::ShapeMismatch {
                    context: format!("subject {}", subj.subject_id),
                    detail: format!("{} electrodes exceed e_max {e_max}", subj.n_electrodes()),
                });
            }
            let src = subj.trial(t);
            let dst = &mut b.voltages[i * e_max * n..];
            dst[..src.len()].copy_from_slice(src);
            for (e, meta) in subj.electrodes.iter().enumerate() {
                b.mask[i * e_max + e] = true;
                b.mni[i * e_max + e] = meta.mni;
            }
            b.subjects.push(subj.subject_id.clone());
            b.targets.push(subj.rts_ms[t]);
        }
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.len();
        if self.voltages.len() != b * self.e_max * self.n_samples
            || self.mask.len() != b * self.e_max
            || self.mni.len() != b * self.e_max
            || self.targets.len() != b
        {
            return Err(Error::ShapeMismatch {
                context: "trial batch".into(),
                detail: format!("inconsistent buffers for {b} trials x {} electrodes", self.e_max),
            });
        }
        for i in 0..b {
            for e in 0..self.e_max {
                if self.mask[i * self.e_max + e] && self.signal(i, e).iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("trial {i} electrode slot {e}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn signal(&self, trial: usize, slot: usize) -> &[f32] {
        let off = (trial * self.e_max + slot) * self.n_samples;
        &self.voltages[off..off + self.n_samples]
    }

    /// Borrowing model inputs; resolves each trial's subject to a head.
    pub fn inputs<R: Real>(&self, model: &Model<R>) -> Result<Vec<TrialInput<'_>>> {
        self.validate()?;
        if self.e_max > model.config.e_max {
            return Err(Error::ShapeMismatch {
                context: "trial batch".into(),
                detail: format!("e_max {} exceeds model e_max {}", self.e_max, model.config.e_max),
            });
        }
        (0..self.len())
            .map(|i| {
                let electrodes = (0..self.e_max)
                    .filter(|&e| self.mask[i * self.e_max + e])
                    .map(|e| ElectrodeInput {
                        slot: e,
                        signal: self.signal(i, e),
                        mni: self.mni[i * self.e_max + e],
                    })
                    .collect();
                Ok(TrialInput {
                    head: model.head_index(&self.subjects[i])?,
                    electrodes,
                })
            })
            .collect()
    }
}

/// Model inputs borrowed straight from a processed cohort.
pub fn cohort_inputs<'a, R: Real>(
    model: &Model<R>,
    cohort: &'a ProcessedCohort,
    picks: &[TrialRef],
) -> Result<Vec<TrialInput<'a>>> {
    picks
        .iter()
        .map(|&(s, t)| {
            let subj = cohort
                .subjects
                .get(s)
                .ok_or_else(|| Error::invalid(format!("subject #{s} out of range")))?;
            if t >= subj.n_trials() {
                return Err(Error::invalid(format!(
                    "trial {t} out of range for {}",
                    subj.subject_id
                )));
            }
            let block = subj.trial(t);
            Ok(TrialInput {
                head: model.head_index(&subj.subject_id)?,
                electrodes: subj
                    .electrodes
                    .iter()
                    .enumerate()
                    .map(|(e, m)| ElectrodeInput {
                        slot: e,
                        signal: &block[e * TRIAL_SAMPLES..(e + 1) * TRIAL_SAMPLES],
                        mni: m.mni,
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Every `(subject, trial)` of the listed trial indices per subject.
pub fn trial_refs(per_subject: &[Vec<usize>]) -> Vec<TrialRef> {
    per_subject
        .iter()
        .enumerate()
        .flat_map(|(s, ts)| ts.iter().map(move |&t| (s, t)))
        .collect()
}
