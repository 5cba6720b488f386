//! Butterworth IIR design in second-order sections and zero-phase filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// High-γ band edges, Hz.
pub const HIGH_GAMMA_HZ: (f64, f64) = (70.0, 150.0);

/// One biquad, `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

/// Poles of the unit-cutoff analog Butterworth prototype.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    let n = order as f64;
    (0..order)
        .map(|k| {
            let m = -(n - 1.0) + 2.0 * k as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n))
        })
        .collect()
}

fn bilinear(roots: &[Complex64], fs2: f64) -> Vec<Complex64> {
    roots.iter().map(|r| (fs2 + r) / (fs2 - r)).collect()
}

/// Butterworth bandpass of prototype order `order` (the result has `order`
/// sections and `2·order` poles).
pub fn butter_bandpass(order: usize, lo_hz: f64, hi_hz: f64, fs: f64) -> Result<Sos> {
    let nyq = fs / 2.0;
    if order == 0 || !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < nyq) {
        return Err(Error::invalid(format!(
            "bandpass {lo_hz}-{hi_hz} Hz of order {order} is not realizable at {fs} Hz"
        )));
    }
    let (w1, w2) = (prewarp(lo_hz, fs), prewarp(hi_hz, fs));
    let bw = w2 - w1;
    let w0 = (w1 * w2).sqrt();

    let mut poles = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let pl = p * bw / 2.0;
        let disc = (pl * pl - w0 * w0).sqrt();
        poles.push(pl + disc);
        poles.push(pl - disc);
    }
    let zeros = vec![Complex64::new(0.0, 0.0); order];
    let k = bw.powi(order as i32);

    let fs2 = 2.0 * fs;
    let zp = bilinear(&poles, fs2);
    let mut zz = bilinear(&zeros, fs2);
    zz.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), order));
    let num: Complex64 = zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let kz = k * (num / den).re;
    Ok(zpk_to_sos(&zz, &zp, kz))
}

pub fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Sos> {
    if order == 0 || !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::invalid(format!(
            "lowpass at {cutoff_hz} Hz of order {order} is not realizable at {fs} Hz"
        )));
    }
    let wc = prewarp(cutoff_hz, fs);
    let poles: Vec<Complex64> = prototype_poles(order).into_iter().map(|p| p * wc).collect();
    let k = wc.powi(order as i32);
    let fs2 = 2.0 * fs;
    let zp = bilinear(&poles, fs2);
    let zz = vec![Complex64::new(-1.0, 0.0); order];
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let kz = k * (1.0 / den).re;
    Ok(zpk_to_sos(&zz, &zp, kz))
}

/// Group conjugate pole pairs into biquads and pair real zeros outermost-first.
/// Zeros here are always real (±1), which is all the designs above produce.
fn zpk_to_sos(zeros: &[Complex64], poles: &[Complex64], k: f64) -> Sos {
    const EPS: f64 = 1e-10;
    let mut pole_quads: Vec<[f64; 2]> = poles
        .iter()
        .filter(|p| p.im > EPS)
        .map(|p| [-2.0 * p.re, p.norm_sqr()])
        .collect();
    let mut real_poles: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= EPS).map(|p| p.re).collect();
    real_poles.sort_by(f64::total_cmp);
    for pair in real_poles.chunks(2) {
        match pair {
            [p1, p2] => pole_quads.push([-(p1 + p2), p1 * p2]),
            [p] => pole_quads.push([-p, 0.0]),
            _ => unreachable!(),
        }
    }

    let mut zr: Vec<f64> = zeros.iter().map(|z| z.re).collect();
    zr.sort_by(f64::total_cmp);
    let mut zero_quads = Vec::new();
    let (mut i, mut j) = (0usize, zr.len());
    while i < j {
        if j - i >= 2 {
            let (z1, z2) = (zr[i], zr[j - 1]);
            zero_quads.push([1.0, -(z1 + z2), z1 * z2]);
            i += 1;
            j -= 1;
        } else {
            zero_quads.push([1.0, -zr[i], 0.0]);
            i += 1;
        }
    }
    // First-order leftovers belong together.
    pole_quads.sort_by_key(|q| q[1] == 0.0);
    zero_quads.sort_by_key(|q| q[2] == 0.0);

    let sections = pole_quads
        .iter()
        .zip(&zero_quads)
        .enumerate()
        .map(|(s, (a, b))| {
            let g = if s == 0 { k } else { 1.0 };
            Biquad {
                b: [g * b[0], g * b[1], g * b[2]],
                a: [1.0, a[0], a[1]],
            }
        })
        .collect();
    Sos { sections }
}

impl Sos {
    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f_hz / fs);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| (s.b[0] + s.b[1] * z1 + s.b[2] * z2) / (s.a[0] + s.a[1] * z1 + s.a[2] * z2))
            .product()
    }

    /// Steady-state initial conditions for a unit step, per section.
    fn step_zi(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [b0, b1, b2] = s.b;
                let [_, a1, a2] = s.a;
                // Solve [[1+a1, -1], [a2, 1]] zi = [b1 - a1 b0, b2 - a2 b0].
                let r0 = b1 - a1 * b0;
                let r1 = b2 - a2 * b0;
                let det = (1.0 + a1) + a2;
                let z0 = (r0 + r1) / det;
                let z1 = r1 - a2 * z0;
                let zi = [scale * z0, scale * z1];
                scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
                zi
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], zi: Option<(&[[f64; 2]], f64)>) {
        for (si, s) in self.sections.iter().enumerate() {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            let (mut z0, mut z1) = match zi {
                Some((zi, x0)) => (zi[si][0] * x0, zi[si][1] * x0),
                None => (0.0, 0.0),
            };
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z0;
                z0 = b1 * xin - a1 * y + z1;
                z1 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Causal filtering from rest (transposed direct form II).
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, None);
        y
    }

    /// Zero-phase forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let trivial_b = self.sections.iter().filter(|s| s.b[2] == 0.0).count();
        let trivial_a = self.sections.iter().filter(|s| s.a[2] == 0.0).count();
        let padlen = 3 * (2 * self.sections.len() + 1 - trivial_b.min(trivial_a));
        if n <= padlen {
            return Err(Error::invalid(format!(
                "signal of {n} samples is too short for zero-phase filtering (needs > {padlen})"
            )));
        }
        let mut ext = Vec::with_capacity(n + 2 * padlen);
        ext.extend((1..=padlen).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=padlen).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_zi();
        let x0 = ext[0];
        self.run(&mut ext, Some((&zi, x0)));
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, Some((&zi, y0)));
        ext.reverse();
        Ok(ext[padlen..padlen + n].to_vec())
    }
}

/// Zero-phase 4th-order Butterworth 70–150 Hz bandpass.
pub fn bandpass_hg(signal: &[f64], fs: f64) -> Result<Vec<f64>> {
    if fs <= 2.0 * HIGH_GAMMA_HZ.1 {
        return Err(Error::invalid(format!(
            "sampling rate {fs} Hz is too low for the {}-{} Hz band",
            HIGH_GAMMA_HZ.0, HIGH_GAMMA_HZ.1
        )));
    }
    butter_bandpass(4, HIGH_GAMMA_HZ.0, HIGH_GAMMA_HZ.1, fs)?.filtfilt(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analog Butterworth bandpass magnitude at the prewarped frequency, which
    /// the bilinear design reproduces exactly.
    fn bandpass_oracle(order: usize, lo: f64, hi: f64, fs: f64, f: f64) -> f64 {
        let w = prewarp(f, fs);
        let (w1, w2) = (prewarp(lo, fs), prewarp(hi, fs));
        let x = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + x.powi(2 * order as i32)).sqrt()
    }

    fn lowpass_oracle(order: usize, fc: f64, fs: f64, f: f64) -> f64 {
        let x = prewarp(f, fs) / prewarp(fc, fs);
        1.0 / (1.0 + x.powi(2 * order as i32)).sqrt()
    }

    fn tone(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    fn interior_amplitude(x: &[f64]) -> f64 {
        let n = x.len();
        let mid = &x[n / 4..3 * n / 4];
        (2.0 * mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt()
    }

    #[test]
    fn bandpass_matches_analog_oracle() {
        for fs in [512.0, 1024.0] {
            let sos = butter_bandpass(4, 70.0, 150.0, fs).unwrap();
            assert_eq!(sos.sections.len(), 4);
            for f in [5.0, 10.0, 40.0, 70.0, 90.0, 110.0, 150.0, 200.0, 250.0] {
                let got = sos.response(f, fs).norm();
                let want = bandpass_oracle(4, 70.0, 150.0, fs, f);
                assert!((got - want).abs() < 1e-9, "fs={fs} f={f}: {got} vs {want}");
            }
            assert!((sos.response(70.0, fs).norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        }
    }

    #[test]
    fn lowpass_matches_analog_oracle() {
        for order in [3, 8] {
            let sos = butter_lowpass(order, 160.0, 1024.0).unwrap();
            for f in [0.0, 50.0, 160.0, 200.0, 400.0] {
                let got = sos.response(f, 1024.0).norm();
                let want = lowpass_oracle(order, 160.0, 1024.0, f);
                assert!((got - want).abs() < 1e-9, "order={order} f={f}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn passband_tone_kept_stopband_tone_removed() {
        let fs = 1024.0;
        let y = bandpass_hg(&tone(110.0, fs, 4096), fs).unwrap();
        let oracle = bandpass_oracle(4, 70.0, 150.0, fs, 110.0).powi(2);
        let amp = interior_amplitude(&y);
        assert!(
            (amp - 1.0).abs() < 0.05 && (amp - oracle).abs() < 1e-3,
            "passband amplitude {amp}"
        );

        let y = bandpass_hg(&tone(10.0, fs, 4096), fs).unwrap();
        let amp = interior_amplitude(&y);
        assert!(amp < 0.01 && amp < 10.0 * bandpass_oracle(4, 70.0, 150.0, fs, 10.0).powi(2) + 1e-6);
    }

    #[test]
    fn zero_in_zero_out() {
        assert!(bandpass_hg(&[0.0; 500], 1024.0).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn filtfilt_has_zero_lag() {
        let fs = 1024.0;
        let x = tone(100.0, fs, 4096);
        let y = bandpass_hg(&x, fs).unwrap();
        let (lo, hi) = (1024, 3072);
        let xc = |lag: i64| -> f64 { (lo..hi).map(|i| x[i] * y[(i as i64 + lag) as usize]).sum() };
        let best = (-5i64..=5).max_by(|a, b| xc(*a).total_cmp(&xc(*b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn rejects_low_rates_and_short_signals() {
        assert!(bandpass_hg(&[0.0; 1000], 256.0).is_err());
        assert!(bandpass_hg(&[0.0; 20], 1024.0).is_err());
    }
}
