//! Preprocessing and electrode selection: montage, line-noise screening,
//! artifact rejection, high-γ envelope, bootstrap SNR test with FDR control,
//! then anti-aliased 400 Hz z-scored decoding epochs.

mod epochs;
mod filter;
mod hilbert;
mod montage;
mod pipeline;
mod processed;
mod reject;
mod resample;
mod selection;
mod spectral;

pub use epochs::{window_samples, window_start, EpochSet, DECODING_WINDOW_MS, SELECTION_WINDOW_MS};
pub use filter::{bandpass_hg, butter_bandpass, butter_lowpass, Biquad, Sos, HIGH_GAMMA_HZ};
pub use hilbert::{analytic_signal, hilbert_envelope};
pub use montage::{bipolar_montage, shank_pairs};
pub use pipeline::{
    decoding_signal, finalize, high_gamma_envelope, preprocess, select_electrodes, zscore, ElectrodeReport,
    PreprocessConfig, SelectionReport, SubjectReport, ANTI_ALIAS_HZ, ANTI_ALIAS_ORDER,
};
pub use processed::{ProcessedCohort, ProcessedSubject, PROCESSED_RATE_HZ, TRIAL_SAMPLES};
pub use reject::{reject_bad_trials, AMPLITUDE_FACTOR, SATURATION_RUN};
pub use resample::{rational_ratio, resample_poly};
pub use selection::{bh_fdr, bootstrap_test, snr_statistic, split_periods, SnrResult, MIN_BOOTSTRAP_ITER, N_BLOCKS};
pub use spectral::{line_noise_ratio, welch_psd, LINE_BAND_HZ, REFERENCE_BAND_HZ};
