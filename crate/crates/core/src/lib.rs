//! Multi-subject sEEG decoding: cohort handling, preprocessing and electrode
//! selection, a factorized spatiotemporal attention network with per-subject
//! heads, training workflows and evaluation.

pub mod cohort;
pub mod error;
pub mod eval;
pub mod model;
pub mod real;
pub mod rng;
pub mod sigproc;
pub mod train;

pub use cohort::{Cohort, ElectrodeMeta, Session, SignalMatrix, Subject, TrialEvent};
pub use error::{Error, Result};
pub use real::Real;
