use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const LINE_BAND_HZ: (f64, f64) = (58.0, 62.0);
pub const REFERENCE_BAND_HZ: (f64, f64) = (18.0, 22.0);
pub const WELCH_SEGMENT_S: f64 = 2.0;

/// One-sided Welch power spectral density: periodic Hann windows of
/// `nperseg` samples, 50 % overlap, per-segment mean removal.
/// Returns `(frequencies, density)`.
pub fn welch_psd(x: &[f64], fs: f64, nperseg: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if nperseg < 2 || x.len() < nperseg {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one {nperseg}-sample window",
            x.len()
        )));
    }
    let step = nperseg - nperseg / 2;
    let window: Vec<f64> = (0..nperseg)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / nperseg as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(nperseg);
    let n_freq = nperseg / 2 + 1;
    let mut acc = vec![0.0; n_freq];
    let mut n_seg = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); nperseg];
    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg = &x[start..start + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        n_seg += 1;
        start += step;
    }
    let scale = 1.0 / (fs * wss * n_seg as f64);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || (nperseg % 2 == 0 && k == nperseg / 2) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let freqs = (0..n_freq).map(|k| k as f64 * fs / nperseg as f64).collect();
    Ok((freqs, psd))
}

fn band_power(freqs: &[f64], psd: &[f64], band: (f64, f64)) -> f64 {
    freqs
        .iter()
        .zip(psd)
        .filter(|(f, _)| **f >= band.0 && **f <= band.1)
        .map(|(_, p)| p)
        .sum()
}

/// Power in 58–62 Hz over power in 18–22 Hz. Electrodes with a ratio above 1
/// are excluded as line-noise contaminated.
pub fn line_noise_ratio(x: &[f64], fs: f64) -> Result<f64> {
    if fs <= 2.0 * LINE_BAND_HZ.1 {
        return Err(Error::invalid(format!(
            "sampling rate {fs} Hz cannot resolve the 58-62 Hz band"
        )));
    }
    let nperseg = (WELCH_SEGMENT_S * fs).round() as usize;
    let (f, p) = welch_psd(x, fs, nperseg)?;
    let line = band_power(&f, &p, LINE_BAND_HZ);
    let reference = band_power(&f, &p, REFERENCE_BAND_HZ);
    Ok(if reference > 0.0 {
        line / reference
    } else if line > 0.0 {
        f64::INFINITY
    } else {
        0.0
    })
}
