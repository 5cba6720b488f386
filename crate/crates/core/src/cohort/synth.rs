//! Synthetic multi-subject cohorts with a known, decodable response-time signal.
//!
//! Each electrode carries 1/f^α background noise. Responsive electrodes add, on
//! every trial, a Gaussian-windowed high-γ burst and a slow evoked deflection,
//! both centred at a latency that is an affine function of the trial's response
//! time plus jitter.

use std::f64::consts::PI;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{Cohort, ElectrodeMeta, Session, SignalMatrix, Subject, TrialEvent};
use crate::error::{Error, Result};
use crate::rng;

/// Sampling box for electrode MNI coordinates (mm).
pub const MNI_BOX: [(f64, f64); 3] = [(-90.0, 90.0), (-120.0, 90.0), (-70.0, 80.0)];

const LEAD_IN_S: f64 = 1.0;
const TAIL_S: f64 = 0.5;
const FOREPERIODS_S: [f64; 2] = [0.5, 1.5];
const ITI_S: (f64, f64) = (0.7, 1.2);
const TRIAL_WINDOW_S: f64 = 1.5;
const NOISE_FLOOR_HZ: f64 = 0.5;
const HIGH_GAMMA: (f64, f64) = (70.0, 150.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Inclusive range the per-subject electrode count is drawn from.
    pub electrodes_per_subject: (usize, usize),
    /// Fraction of each subject's electrodes (rounded up) carrying the task response.
    pub responsive_fraction: f64,
    pub trials_per_subject: usize,
    /// Inclusive range for the number of sessions per subject.
    pub sessions_per_subject: (usize, usize),
    /// Per-subject mean of ln(RT / ms), drawn uniformly from this range.
    pub rt_log_mean: (f64, f64),
    /// Per-subject SD of ln(RT / ms), drawn uniformly from this range.
    pub rt_log_sd: (f64, f64),
    /// Peak burst amplitude over the background's high-γ band RMS.
    pub burst_snr: f64,
    pub burst_freq_hz: f64,
    /// SD of the burst's Gaussian window.
    pub burst_width_ms: f64,
    /// Peak of the slow evoked deflection, in units of the background SD.
    pub evoked_gain: f64,
    pub evoked_width_ms: f64,
    /// Probability that an electrode's evoked deflection is negative.
    pub evoked_flip_prob: f64,
    pub latency_offset_ms: f64,
    pub latency_slope: f64,
    pub latency_jitter_ms: f64,
    /// Background power spectrum ∝ 1/f^noise_exponent.
    pub noise_exponent: f64,
    pub noise_amplitude_uv: f64,
    pub sampling_rates: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 4,
            electrodes_per_subject: (3, 28),
            responsive_fraction: 0.5,
            trials_per_subject: 200,
            sessions_per_subject: (1, 2),
            rt_log_mean: (330f64.ln(), 500f64.ln()),
            rt_log_sd: (0.15, 0.30),
            burst_snr: 3.0,
            burst_freq_hz: 110.0,
            burst_width_ms: 60.0,
            evoked_gain: 2.0,
            evoked_width_ms: 40.0,
            evoked_flip_prob: 0.0,
            latency_offset_ms: 60.0,
            latency_slope: 0.6,
            latency_jitter_ms: 15.0,
            noise_exponent: 1.0,
            noise_amplitude_uv: 50.0,
            sampling_rates: vec![512.0, 1024.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.electrodes_per_subject;
        if lo < 1 || hi > 28 || lo > hi {
            return Err(Error::invalid(format!(
                "electrodes_per_subject {lo}..={hi} must lie within 1..=28"
            )));
        }
        if self.trials_per_subject < 20 {
            return Err(Error::invalid("trials_per_subject must be at least 20"));
        }
        let (slo, shi) = self.sessions_per_subject;
        if slo < 1 || slo > shi || shi > self.trials_per_subject {
            return Err(Error::invalid(
                "sessions_per_subject must be a non-empty range starting at 1 or more",
            ));
        }
        if !(0.0..=1.0).contains(&self.responsive_fraction) {
            return Err(Error::invalid("responsive_fraction must lie in [0, 1]"));
        }
        if self.sampling_rates.is_empty() || self.sampling_rates.iter().any(|f| *f < 2.0 * HIGH_GAMMA.1 + 1.0) {
            return Err(Error::invalid("sampling rates must be present and above 301 Hz"));
        }
        let ranges_ok =
            self.rt_log_mean.0 <= self.rt_log_mean.1 && self.rt_log_sd.0 <= self.rt_log_sd.1 && self.rt_log_sd.0 > 0.0;
        let positives = [
            self.burst_width_ms,
            self.evoked_width_ms,
            self.noise_amplitude_uv,
            self.burst_freq_hz,
        ];
        if !ranges_ok
            || positives.iter().any(|v| !(*v > 0.0))
            || self.burst_snr < 0.0
            || self.evoked_gain < 0.0
            || !(0.0..=1.0).contains(&self.evoked_flip_prob)
        {
            return Err(Error::invalid("synthetic signal parameters out of range"));
        }
        if self.latency_jitter_ms < 0.0 || self.noise_exponent < 0.0 {
            return Err(Error::invalid(
                "latency_jitter_ms and noise_exponent must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Generator-internal ground truth, kept alongside the cohort for verification.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub responsive: Vec<bool>,
    /// Burst/evoked centre latency after the color change, per trial, in ms.
    pub latencies_ms: Vec<f64>,
    pub rts_ms: Vec<f64>,
    pub rt_log_mean: f64,
    pub rt_log_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub subjects: Vec<SubjectTruth>,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Cohort> {
    generate_synthetic_with_truth(cfg).map(|(c, _)| c)
}

pub fn generate_synthetic_with_truth(cfg: &SynthConfig) -> Result<(Cohort, SynthTruth)> {
    cfg.validate()?;
    let (subjects, truths): (Vec<_>, Vec<_>) = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|s| generate_subject(cfg, s))
        .unzip();
    let cohort = Cohort {
        subjects,
        seed: Some(cfg.seed),
        provenance: format!(
            "synthetic: subjects={} trials={} burst_snr={} responsive_fraction={} seed={}",
            cfg.n_subjects, cfg.trials_per_subject, cfg.burst_snr, cfg.responsive_fraction, cfg.seed
        ),
    };
    cohort.validate()?;
    Ok((cohort, SynthTruth { subjects: truths }))
}

struct TrialPlan {
    event: TrialEvent,
    /// Color change time, seconds from session start.
    cc_s: f64,
    latency_ms: f64,
}

fn generate_subject(cfg: &SynthConfig, s: usize) -> (Subject, SubjectTruth) {
    let subject_seed = rng::derive_seed(cfg.seed, "subject", s as u64);
    let mut r = rng::stream(subject_seed, "layout", 0);
    let subject_id = format!("S{s:02}");

    let n_elec = r.random_range(cfg.electrodes_per_subject.0..=cfg.electrodes_per_subject.1);
    let n_resp = ((cfg.responsive_fraction * n_elec as f64).ceil() as usize).min(n_elec);
    let mut order: Vec<usize> = (0..n_elec).collect();
    order.shuffle(&mut r);
    let mut responsive = vec![false; n_elec];
    for &e in &order[..n_resp] {
        responsive[e] = true;
    }

    let electrodes: Vec<ElectrodeMeta> = (0..n_elec)
        .map(|e| {
            let mni = MNI_BOX.map(|(lo, hi)| r.random_range(lo..hi));
            ElectrodeMeta::new(format!("e{e:02}"), mni)
        })
        .collect();
    let gains: Vec<f64> = (0..n_elec).map(|_| r.random_range(0.7..1.3)).collect();
    let evoked_sign: Vec<f64> = (0..n_elec)
        .map(|_| if r.random_bool(cfg.evoked_flip_prob) { -1.0 } else { 1.0 })
        .collect();

    let rt_log_mean = r.random_range(cfg.rt_log_mean.0..=cfg.rt_log_mean.1);
    let rt_log_sd = r.random_range(cfg.rt_log_sd.0..=cfg.rt_log_sd.1);
    let rt_dist = LogNormal::new(rt_log_mean, rt_log_sd).expect("validated lognormal");
    let jitter = Normal::new(0.0, cfg.latency_jitter_ms).expect("validated jitter");

    let n_sessions = r.random_range(cfg.sessions_per_subject.0..=cfg.sessions_per_subject.1);
    let base = cfg.trials_per_subject / n_sessions;
    let extra = cfg.trials_per_subject % n_sessions;

    let mut sessions = Vec::with_capacity(n_sessions);
    let mut latencies = Vec::with_capacity(cfg.trials_per_subject);
    let mut rts = Vec::with_capacity(cfg.trials_per_subject);

    for sess in 0..n_sessions {
        let n_trials = base + usize::from(sess < extra);
        let fs = *cfg.sampling_rates.choose(&mut r).expect("validated rates");

        let mut t = LEAD_IN_S;
        let mut plans = Vec::with_capacity(n_trials);
        for _ in 0..n_trials {
            let fp = *FOREPERIODS_S.choose(&mut r).expect("non-empty");
            let stim_s = t;
            let cc_s = stim_s + fp;
            let rt_ms: f64 = rt_dist.sample(&mut r);
            let latency_ms = (cfg.latency_offset_ms + cfg.latency_slope * rt_ms + jitter.sample(&mut r))
                .clamp(0.0, 1000.0 * TRIAL_WINDOW_S - 3.0 * cfg.burst_width_ms);
            plans.push(TrialPlan {
                event: TrialEvent {
                    stim_onset: (stim_s * fs).round() as usize,
                    color_change: (cc_s * fs).round() as usize,
                    rt_ms,
                },
                cc_s,
                latency_ms,
            });
            t = cc_s + TRIAL_WINDOW_S + r.random_range(ITI_S.0..ITI_S.1);
        }
        let n_samples = ((t + TAIL_S) * fs).ceil() as usize;

        let rows: Vec<Vec<f32>> = (0..n_elec)
            .into_par_iter()
            .map(|e| {
                let mut noise_rng = rng::stream(subject_seed, "noise", (sess * 4096 + e) as u64);
                let (mut x, band_sd) = pink_noise(n_samples, fs, cfg.noise_exponent, &mut noise_rng);
                for v in x.iter_mut() {
                    *v *= cfg.noise_amplitude_uv;
                }
                if responsive[e] {
                    let mut phase_rng = rng::stream(subject_seed, "phase", (sess * 4096 + e) as u64);
                    let burst_amp = cfg.burst_snr * band_sd * cfg.noise_amplitude_uv * gains[e];
                    let evoked_amp = cfg.evoked_gain * cfg.noise_amplitude_uv * gains[e] * evoked_sign[e];
                    for p in &plans {
                        let phase = phase_rng.random_range(0.0..2.0 * PI);
                        add_response(
                            &mut x,
                            fs,
                            p.cc_s + p.latency_ms / 1000.0,
                            burst_amp,
                            evoked_amp,
                            phase,
                            cfg,
                        );
                    }
                }
                x.into_iter().map(|v| v as f32).collect()
            })
            .collect();

        latencies.extend(plans.iter().map(|p| p.latency_ms));
        rts.extend(plans.iter().map(|p| p.event.rt_ms));
        sessions.push(Session {
            session_id: format!("ses-{sess}"),
            subject_id: subject_id.clone(),
            sampling_rate: fs,
            signals: SignalMatrix::from_rows(rows).expect("equal-length rows"),
            events: plans.into_iter().map(|p| p.event).collect(),
        });
    }

    let truth = SubjectTruth {
        subject_id: subject_id.clone(),
        responsive,
        latencies_ms: latencies,
        rts_ms: rts,
        rt_log_mean,
        rt_log_sd,
    };
    (
        Subject {
            subject_id,
            electrodes,
            sessions,
        },
        truth,
    )
}

fn add_response(x: &mut [f64], fs: f64, center_s: f64, burst_amp: f64, evoked_amp: f64, phase: f64, cfg: &SynthConfig) {
    let sb = cfg.burst_width_ms / 1000.0;
    let se = cfg.evoked_width_ms / 1000.0;
    let half = 4.0 * sb.max(se);
    let lo = ((center_s - half) * fs).floor().max(0.0) as usize;
    let hi = (((center_s + half) * fs).ceil() as usize).min(x.len());
    let w = 2.0 * PI * cfg.burst_freq_hz;
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        let dt = i as f64 / fs - center_s;
        let burst = burst_amp * (-0.5 * (dt / sb).powi(2)).exp() * (w * dt + phase).sin();
        let evoked = evoked_amp * (-0.5 * (dt / se).powi(2)).exp();
        *v += burst + evoked;
    }
}

/// Unit-SD noise with power spectrum ∝ 1/f^alpha (flat below 0.5 Hz, no DC).
/// Also returns the expected SD of its 70–150 Hz band component.
fn pink_noise(n: usize, fs: f64, alpha: f64, r: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let n_fft = n.next_power_of_two().max(2);
    let mut spec = vec![Complex::new(0.0, 0.0); n_fft];
    let mut total = 0.0;
    let mut band = 0.0;
    for k in 1..=n_fft / 2 {
        let f = k as f64 * fs / n_fft as f64;
        let a = f.max(NOISE_FLOOR_HZ).powf(-alpha / 2.0);
        let re: f64 = r.sample(StandardNormal);
        let im: f64 = r.sample(StandardNormal);
        let w = if k == n_fft / 2 { 1.0 } else { 2.0 };
        total += w * a * a;
        if (HIGH_GAMMA.0..=HIGH_GAMMA.1).contains(&f) {
            band += w * a * a;
        }
        if k == n_fft / 2 {
            spec[k] = Complex::new(a * re, 0.0);
        } else {
            spec[k] = Complex::new(a * re, a * im);
            spec[n_fft - k] = spec[k].conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n_fft).process(&mut spec);
    let mut x: Vec<f64> = spec[..n].iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for v in x.iter_mut() {
        *v = (*v - mean) / sd;
    }
    (x, (band / total).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            n_subjects: 2,
            electrodes_per_subject: (3, 5),
            trials_per_subject: 24,
            seed,
            ..SynthConfig::default()
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn same_seed_same_cohort() {
        let a = generate_synthetic(&small_cfg(7)).unwrap();
        let b = generate_synthetic(&small_cfg(7)).unwrap();
        let c = generate_synthetic(&small_cfg(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn structure_follows_config() {
        let (c, truth) = generate_synthetic_with_truth(&small_cfg(1)).unwrap();
        assert_eq!(c.subjects.len(), 2);
        for (s, t) in c.subjects.iter().zip(&truth.subjects) {
            assert!((3..=5).contains(&s.electrodes.len()));
            assert_eq!(s.n_trials(), 24);
            assert_eq!(t.latencies_ms.len(), 24);
            let n_resp = t.responsive.iter().filter(|r| **r).count();
            assert_eq!(n_resp, (0.5 * s.electrodes.len() as f64).ceil() as usize);
            for e in &s.electrodes {
                for (v, (lo, hi)) in e.mni.iter().zip(MNI_BOX) {
                    assert!(*v >= lo && *v < hi);
                }
            }
        }
    }

    #[test]
    fn zero_responsive_fraction_has_no_responders() {
        let cfg = SynthConfig {
            responsive_fraction: 0.0,
            ..small_cfg(3)
        };
        let (_, truth) = generate_synthetic_with_truth(&cfg).unwrap();
        assert!(truth.subjects.iter().all(|t| t.responsive.iter().all(|r| !r)));
    }

    #[test]
    fn latency_tracks_response_time() {
        let cfg = SynthConfig {
            burst_snr: 5.0,
            responsive_fraction: 0.5,
            trials_per_subject: 150,
            ..small_cfg(11)
        };
        let (_, truth) = generate_synthetic_with_truth(&cfg).unwrap();
        for t in &truth.subjects {
            let r = pearson(&t.latencies_ms, &t.rts_ms);
            assert!(r >= 0.9, "latency/RT correlation {r}");
        }
    }

    #[test]
    fn pink_noise_is_unit_variance() {
        let mut r = rng::stream(0, "t", 0);
        let (x, band) = pink_noise(10_000, 1024.0, 1.0, &mut r);
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((var - 1.0).abs() < 1e-9);
        assert!(band > 0.0 && band < 1.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SynthConfig {
            electrodes_per_subject: (0, 4),
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = SynthConfig {
            trials_per_subject: 10,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = SynthConfig {
            electrodes_per_subject: (3, 29),
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
