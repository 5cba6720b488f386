//! Factorized spatiotemporal attention network with per-subject heads.

mod batch;
mod checkpoint;
mod config;
pub mod encoding;
pub mod layers;
mod network;
pub mod params;

pub use batch::{cohort_inputs, trial_refs, TrialBatch, TrialRef};
pub use checkpoint::{CheckpointMeta, IndexEntry, CHECKPOINT_VERSION};
pub use config::{Ablations, ModelConfig, PeScheme, FOURIER_FREQS, RBF_CENTERS, RBF_VARIANCES, SINUSOIDAL_DIM};
pub use network::{ElectrodeInput, GradResult, Model, ParamCounts, TargetScaler, TrialInput, CHUNK};
pub use params::{describe, init_params, HeadOffsets, Layout, ParamStore, Role, TensorInfo};
