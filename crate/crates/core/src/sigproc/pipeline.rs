//! Raw cohort → selection report → processed decoding cohort.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::epochs::{window_samples, window_start, EpochSet, DECODING_WINDOW_MS, SELECTION_WINDOW_MS};
use super::filter::{bandpass_hg, butter_lowpass};
use super::hilbert::hilbert_envelope;
use super::montage::{bipolar_montage, shank_pairs};
use super::processed::{ProcessedCohort, ProcessedSubject, PROCESSED_RATE_HZ, TRIAL_SAMPLES};
use super::reject::reject_bad_trials;
use super::resample::{rational_ratio, resample_poly};
use super::selection::{bh_fdr, bootstrap_test, SnrResult};
use super::spectral::line_noise_ratio;
use crate::cohort::{Cohort, ElectrodeMeta, Session, Subject};
use crate::error::{Error, Result};
use crate::rng;

pub const ANTI_ALIAS_HZ: f64 = 160.0;
pub const ANTI_ALIAS_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub alpha: f64,
    pub n_iter: usize,
    pub seed: u64,
    /// Re-reference adjacent contacts (ids `<shank><index>`) before anything else.
    pub bipolar: bool,
    /// Rate the high-γ envelope is block-averaged to before the selection test.
    pub envelope_rate_hz: f64,
    pub line_noise_threshold: f64,
    /// Subjects with fewer selected electrodes are dropped.
    pub min_electrodes: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_iter: 10_000,
            seed: 0,
            bipolar: false,
            envelope_rate_hz: 128.0,
            line_noise_threshold: 1.0,
            min_electrodes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElectrodeReport {
    pub id: String,
    pub mni: [f64; 3],
    /// Worst line-noise ratio over the subject's sessions.
    pub line_noise_ratio: f64,
    /// Why the electrode was not tested, if it was not.
    pub excluded: Option<String>,
    pub result: Option<SnrResult>,
}

impl ElectrodeReport {
    pub fn selected(&self) -> bool {
        self.result.is_some_and(|r| r.selected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub electrodes: Vec<ElectrodeReport>,
    pub n_trials: usize,
    pub n_rejected: usize,
    /// Per session, per trial: survived range checks and artifact rejection.
    #[serde(skip)]
    pub kept_trials: Vec<Vec<bool>>,
    pub retained: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub alpha: f64,
    pub n_iter: usize,
    pub seed: u64,
    pub n_tested: usize,
    pub n_selected: usize,
    pub subjects: Vec<SubjectReport>,
}

/// Z-score in place using the population SD; constant input is left centred.
pub fn zscore(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in x.iter_mut() {
        *v -= mean;
        if sd > 0.0 {
            *v /= sd;
        }
    }
}

pub fn high_gamma_envelope(x: &[f64], fs: f64) -> Result<Vec<f64>> {
    Ok(hilbert_envelope(&bandpass_hg(x, fs)?))
}

fn row_f64(s: &Session, e: usize) -> Vec<f64> {
    s.signals.row(e).iter().map(|&v| v as f64).collect()
}

fn decoding_len(s: &Session) -> usize {
    (s.n_samples() as f64 * PROCESSED_RATE_HZ / s.sampling_rate).ceil() as usize
}

fn trial_fits(s: &Session, cc: usize) -> bool {
    let at_400 = cc as f64 * PROCESSED_RATE_HZ / s.sampling_rate;
    window_start(cc as f64, SELECTION_WINDOW_MS, s.sampling_rate, s.n_samples()).is_some()
        && window_start(at_400, DECODING_WINDOW_MS, PROCESSED_RATE_HZ, decoding_len(s)).is_some()
}

/// Raw epochs over the selection window for the given electrodes and trials.
fn raw_epochs(s: &Session, electrodes: &[usize], trials: &[usize]) -> Result<EpochSet> {
    let n = window_samples(SELECTION_WINDOW_MS, s.sampling_rate);
    let mut data = Vec::with_capacity(trials.len() * electrodes.len() * n);
    for &t in trials {
        let start = window_start(
            s.events[t].color_change as f64,
            SELECTION_WINDOW_MS,
            s.sampling_rate,
            s.n_samples(),
        )
        .expect("trial range checked");
        for &e in electrodes {
            data.extend_from_slice(&s.signals.row(e)[start..start + n]);
        }
    }
    EpochSet::new(
        trials.len(),
        electrodes.len(),
        SELECTION_WINDOW_MS,
        s.sampling_rate,
        data,
    )
}

/// High-γ envelope epochs over the selection window, block-averaged to
/// `rate`. Returns `[electrode][trial][sample]`.
fn envelope_epochs(s: &Session, electrodes: &[usize], trials: &[usize], rate: f64) -> Result<Vec<Vec<Vec<f32>>>> {
    let factor = s.sampling_rate / rate;
    if factor.fract() != 0.0 || factor < 1.0 {
        return Err(Error::invalid(format!(
            "session {} of subject {}: {} Hz is not an integer multiple of the {rate} Hz envelope rate",
            s.session_id, s.subject_id, s.sampling_rate
        )));
    }
    let factor = factor as usize;
    let n_env = window_samples(SELECTION_WINDOW_MS, rate);
    electrodes
        .par_iter()
        .map(|&e| {
            let env = high_gamma_envelope(&row_f64(s, e), s.sampling_rate)?;
            Ok(trials
                .iter()
                .map(|&t| {
                    let start = window_start(
                        s.events[t].color_change as f64,
                        SELECTION_WINDOW_MS,
                        s.sampling_rate,
                        env.len(),
                    )
                    .expect("trial range checked");
                    (0..n_env)
                        .map(|j| {
                            let b = &env[start + j * factor..start + (j + 1) * factor];
                            (b.iter().sum::<f64>() / factor as f64) as f32
                        })
                        .collect()
                })
                .collect())
        })
        .collect()
}

struct Tested {
    report: SubjectReport,
    /// Electrode indices that went through the bootstrap, with their SNR and p.
    stats: Vec<(usize, f64, f64)>,
}

fn test_subject(subject: &Subject, s_index: usize, cfg: &PreprocessConfig) -> Result<Tested> {
    let n_e = subject.electrodes.len();
    let mut ratio = vec![0f64; n_e];
    let mut excluded: Vec<Option<String>> = vec![None; n_e];
    for s in &subject.sessions {
        let per: Vec<(f64, bool)> = (0..n_e)
            .into_par_iter()
            .map(|e| {
                let x = row_f64(s, e);
                let flat = x.iter().all(|v| *v == x[0]);
                Ok((line_noise_ratio(&x, s.sampling_rate)?, flat))
            })
            .collect::<Result<_>>()?;
        for (e, (r, flat)) in per.into_iter().enumerate() {
            ratio[e] = ratio[e].max(r);
            if flat {
                excluded[e].get_or_insert_with(|| format!("constant signal in session {}", s.session_id));
            }
        }
    }
    for e in 0..n_e {
        if ratio[e] > cfg.line_noise_threshold {
            excluded[e].get_or_insert_with(|| format!("line-noise ratio {:.3}", ratio[e]));
        }
    }
    let retained: Vec<usize> = (0..n_e).filter(|&e| excluded[e].is_none()).collect();
    let retained_mask: Vec<bool> = (0..n_e).map(|e| excluded[e].is_none()).collect();

    let mut kept_trials = Vec::new();
    let mut n_rejected = 0;
    let mut env: Vec<Vec<Vec<f32>>> = vec![Vec::new(); retained.len()];
    for s in &subject.sessions {
        let fits: Vec<usize> = (0..s.events.len())
            .filter(|&t| trial_fits(s, s.events[t].color_change))
            .collect();
        let mut kept = vec![false; s.events.len()];
        if !retained.is_empty() && !fits.is_empty() {
            let raw = raw_epochs(s, &(0..n_e).collect::<Vec<_>>(), &fits)?;
            let reject = reject_bad_trials(&raw, Some(&retained_mask));
            for (&t, r) in fits.iter().zip(&reject) {
                kept[t] = !r;
            }
        } else {
            for &t in &fits {
                kept[t] = true;
            }
        }
        n_rejected += s.events.len() - kept.iter().filter(|k| **k).count();
        let kept_idx: Vec<usize> = (0..s.events.len()).filter(|&t| kept[t]).collect();
        if !retained.is_empty() {
            for (acc, e) in env
                .iter_mut()
                .zip(envelope_epochs(s, &retained, &kept_idx, cfg.envelope_rate_hz)?)
            {
                acc.extend(e);
            }
        }
        kept_trials.push(kept);
    }
    let n_kept = kept_trials.iter().flatten().filter(|k| **k).count();

    let mut stats = Vec::new();
    let mut note = None;
    if n_kept < 2 {
        note = Some(format!("only {n_kept} usable trials"));
        for (e, ex) in excluded.iter_mut().enumerate() {
            if retained_mask[e] {
                *ex = Some("too few usable trials".into());
            }
        }
    } else if !retained.is_empty() {
        let n_env = env[0][0].len();
        let mut data = Vec::with_capacity(n_kept * retained.len() * n_env);
        for t in 0..n_kept {
            for e in &env {
                data.extend_from_slice(&e[t]);
            }
        }
        let epochs = EpochSet::new(n_kept, retained.len(), SELECTION_WINDOW_MS, cfg.envelope_rate_hz, data)?;
        let seed = rng::derive_seed(cfg.seed, "bootstrap-subject", s_index as u64);
        let p = bootstrap_test(&epochs, cfg.n_iter, seed)?;
        for (i, &e) in retained.iter().enumerate() {
            let trials = epochs.electrode(i);
            let (task, base) = super::selection::split_periods(&trials);
            let snr = super::selection::snr_statistic(&task, &base)?;
            stats.push((e, snr, p[i]));
        }
    }

    let electrodes = subject
        .electrodes
        .iter()
        .zip(excluded)
        .zip(&ratio)
        .map(|((meta, excluded), &r)| ElectrodeReport {
            id: meta.id.clone(),
            mni: meta.mni,
            line_noise_ratio: r,
            excluded,
            result: None,
        })
        .collect();
    Ok(Tested {
        report: SubjectReport {
            subject_id: subject.subject_id.clone(),
            electrodes,
            n_trials: subject.n_trials(),
            n_rejected,
            kept_trials,
            retained: false,
            note,
        },
        stats,
    })
}

/// Line-noise screening, trial rejection, the per-electrode bootstrap test and
/// Benjamini–Hochberg adjustment pooled over every tested electrode of every
/// subject.
pub fn select_electrodes(cohort: &Cohort, cfg: &PreprocessConfig) -> Result<SelectionReport> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {} must lie in (0, 1)", cfg.alpha)));
    }
    cohort.validate()?;
    let tested: Vec<Tested> = cohort
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| test_subject(s, i, cfg))
        .collect::<Result<_>>()?;

    let pooled: Vec<f64> = tested.iter().flat_map(|t| t.stats.iter().map(|s| s.2)).collect();
    let (adjusted, reject) = if pooled.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        bh_fdr(&pooled, cfg.alpha)?
    };

    let mut k = 0;
    let mut subjects = Vec::with_capacity(tested.len());
    for mut t in tested {
        for &(e, snr, p) in &t.stats {
            t.report.electrodes[e].result = Some(SnrResult {
                snr,
                p_value: p,
                p_adjusted: adjusted[k],
                selected: reject[k],
            });
            k += 1;
        }
        let n_sel = t.report.electrodes.iter().filter(|e| e.selected()).count();
        t.report.retained = n_sel >= cfg.min_electrodes;
        if !t.report.retained {
            log::info!(
                "dropping subject {}: {n_sel} selected electrode(s), need {}",
                t.report.subject_id,
                cfg.min_electrodes
            );
            t.report
                .note
                .get_or_insert_with(|| format!("{n_sel} selected electrode(s)"));
        }
        subjects.push(t.report);
    }
    Ok(SelectionReport {
        alpha: cfg.alpha,
        n_iter: cfg.n_iter,
        seed: cfg.seed,
        n_tested: pooled.len(),
        n_selected: reject.iter().filter(|r| **r).count(),
        subjects,
    })
}

/// Anti-alias lowpass, rational resample to 400 Hz and z-score one electrode
/// of one session.
pub fn decoding_signal(x: &[f64], fs: f64) -> Result<Vec<f64>> {
    let (up, down) = rational_ratio(fs, PROCESSED_RATE_HZ)?;
    let filtered = butter_lowpass(ANTI_ALIAS_ORDER, ANTI_ALIAS_HZ, fs)?.filtfilt(x)?;
    let mut y = resample_poly(&filtered, up, down);
    zscore(&mut y);
    Ok(y)
}

/// Broadband decoding epochs of the selected electrodes for every retained
/// subject. Sessions are processed independently, then their trials are
/// concatenated.
pub fn finalize(cohort: &Cohort, report: &SelectionReport) -> Result<ProcessedCohort> {
    let mut subjects = Vec::new();
    for (subject, rep) in cohort.subjects.iter().zip(&report.subjects) {
        if subject.subject_id != rep.subject_id {
            return Err(Error::invalid("selection report does not match the cohort"));
        }
        if !rep.retained {
            continue;
        }
        let selected: Vec<usize> = (0..rep.electrodes.len())
            .filter(|&e| rep.electrodes[e].selected())
            .collect();
        let mut trials = Vec::new();
        let mut rts_ms = Vec::new();
        for (s, kept) in subject.sessions.iter().zip(&rep.kept_trials) {
            let signals: Vec<Vec<f64>> = selected
                .par_iter()
                .map(|&e| decoding_signal(&row_f64(s, e), s.sampling_rate))
                .collect::<Result<_>>()?;
            let len = signals[0].len();
            for (t, ev) in s.events.iter().enumerate() {
                if !kept[t] {
                    continue;
                }
                let at = ev.color_change as f64 * PROCESSED_RATE_HZ / s.sampling_rate;
                let start = window_start(at, DECODING_WINDOW_MS, PROCESSED_RATE_HZ, len).expect("trial range checked");
                for x in &signals {
                    trials.extend(x[start..start + TRIAL_SAMPLES].iter().map(|&v| v as f32));
                }
                rts_ms.push(ev.rt_ms);
            }
        }
        let electrodes = selected
            .iter()
            .map(|&e| ElectrodeMeta {
                selected: true,
                ..subject.electrodes[e].clone()
            })
            .collect();
        let p = ProcessedSubject {
            subject_id: subject.subject_id.clone(),
            electrodes,
            trials,
            rts_ms,
        };
        p.validate()?;
        subjects.push(p);
    }
    Ok(ProcessedCohort {
        subjects,
        seed: cohort.seed,
        provenance: cohort.provenance.clone(),
    })
}

fn montage(cohort: &Cohort) -> Result<Cohort> {
    Ok(Cohort {
        subjects: cohort
            .subjects
            .iter()
            .map(|s| bipolar_montage(s, &shank_pairs(&s.electrodes)))
            .collect::<Result<_>>()?,
        ..cohort.clone()
    })
}

/// Full preprocessing: optional bipolar montage, electrode selection, then
/// [`finalize`].
pub fn preprocess(cohort: &Cohort, cfg: &PreprocessConfig) -> Result<(ProcessedCohort, SelectionReport)> {
    let montaged;
    let cohort = if cfg.bipolar {
        montaged = montage(cohort)?;
        &montaged
    } else {
        cohort
    };
    let report = select_electrodes(cohort, cfg)?;
    let processed = finalize(cohort, &report)?;
    Ok((processed, report))
}
