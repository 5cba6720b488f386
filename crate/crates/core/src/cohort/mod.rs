//! Multi-subject recordings: data model, on-disk bundles, trial splits and the
//! synthetic cohort generator.

mod bundle;
mod split;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bundle::{load_bundle, write_bundle, BUNDLE_MAGIC};
pub use split::{split_counts, split_trials, SplitAssignment, SplitLabel, SplitRatios, TrialCounts};
pub use synth::{generate_synthetic, generate_synthetic_with_truth, SubjectTruth, SynthConfig, SynthTruth};

/// Allowed extent of any MNI coordinate, in millimeters.
pub const MNI_LIMIT_MM: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeMeta {
    pub id: String,
    /// MNI coordinates (x, y, z) in millimeters.
    pub mni: [f64; 3],
    #[serde(default)]
    pub selected: bool,
}

impl ElectrodeMeta {
    pub fn new(id: impl Into<String>, mni: [f64; 3]) -> Self {
        Self {
            id: id.into(),
            mni,
            selected: false,
        }
    }
}

/// One behavioral trial, in samples of the owning session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub stim_onset: usize,
    pub color_change: usize,
    pub rt_ms: f64,
}

/// Dense row-major `[rows × cols]` matrix of `f32` samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl SignalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "signal matrix".into(),
                detail: format!("{} values for {rows}x{cols}", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch {
                context: "signal matrix".into(),
                detail: "ragged rows".into(),
            });
        }
        let n = rows.len();
        Ok(Self {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub subject_id: String,
    /// Hz.
    pub sampling_rate: f64,
    /// `[electrodes × samples]`.
    pub signals: SignalMatrix,
    pub events: Vec<TrialEvent>,
}

impl Session {
    pub fn n_samples(&self) -> usize {
        self.signals.cols()
    }

    pub fn validate(&self, n_electrodes: usize) -> Result<()> {
        let ctx = || format!("subject {} session {}", self.subject_id, self.session_id);
        if !(self.sampling_rate.is_finite() && self.sampling_rate > 0.0) {
            return Err(Error::invalid(format!(
                "{}: bad sampling rate {}",
                ctx(),
                self.sampling_rate
            )));
        }
        if self.signals.rows() != n_electrodes {
            return Err(Error::ShapeMismatch {
                context: ctx(),
                detail: format!(
                    "signals have {} rows but subject lists {} electrodes",
                    self.signals.rows(),
                    n_electrodes
                ),
            });
        }
        if let Some(pos) = self.signals.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{}, electrode row {}", ctx(), pos / self.signals.cols().max(1)),
            });
        }
        let len = self.n_samples();
        for (i, ev) in self.events.iter().enumerate() {
            if ev.stim_onset >= len || ev.color_change >= len {
                return Err(Error::EventOutOfRange {
                    context: ctx(),
                    detail: format!(
                        "trial {i}: stim_onset {} / color_change {} vs {} samples",
                        ev.stim_onset, ev.color_change, len
                    ),
                });
            }
            if !(ev.rt_ms.is_finite() && ev.rt_ms > 0.0) {
                return Err(Error::invalid(format!(
                    "{}: trial {i} has response time {}",
                    ctx(),
                    ev.rt_ms
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub subject_id: String,
    pub electrodes: Vec<ElectrodeMeta>,
    pub sessions: Vec<Session>,
}

impl Subject {
    pub fn n_trials(&self) -> usize {
        self.sessions.iter().map(|s| s.events.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sessions.is_empty() {
            return Err(Error::invalid(format!("subject {} has no sessions", self.subject_id)));
        }
        let mut ids = HashSet::new();
        for e in &self.electrodes {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::invalid(format!(
                    "subject {}: duplicate electrode id {}",
                    self.subject_id, e.id
                )));
            }
            if e.mni.iter().any(|c| !c.is_finite() || c.abs() > MNI_LIMIT_MM) {
                return Err(Error::invalid(format!(
                    "subject {}: electrode {} has MNI {:?} outside ±{MNI_LIMIT_MM} mm",
                    self.subject_id, e.id, e.mni
                )));
            }
        }
        for s in &self.sessions {
            if s.subject_id != self.subject_id {
                return Err(Error::invalid(format!(
                    "session {} claims subject {} but is stored under {}",
                    s.session_id, s.subject_id, self.subject_id
                )));
            }
            s.validate(self.electrodes.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    pub seed: Option<u64>,
    pub provenance: String,
}

impl Cohort {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.subjects {
            if !ids.insert(s.subject_id.as_str()) {
                return Err(Error::invalid(format!("duplicate subject id {}", s.subject_id)));
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn n_sessions(&self) -> usize {
        self.subjects.iter().map(|s| s.sessions.len()).sum()
    }

    pub fn subject(&self, id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }
}
