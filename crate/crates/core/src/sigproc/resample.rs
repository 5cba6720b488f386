use std::f64::consts::PI;

use crate::error::{Error, Result};

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced `(up, down)` with `to / from = up / down`. Both rates must be whole
/// numbers of Hz.
pub fn rational_ratio(from_hz: f64, to_hz: f64) -> Result<(usize, usize)> {
    let whole = |f: f64| f > 0.0 && f.fract() == 0.0 && f < 1e7;
    if !whole(from_hz) || !whole(to_hz) {
        return Err(Error::invalid(format!(
            "cannot resample {from_hz} Hz to {to_hz} Hz: rates must be whole numbers of Hz"
        )));
    }
    let (a, b) = (to_hz as u64, from_hz as u64);
    let g = gcd(a, b);
    let (up, down) = ((a / g) as usize, (b / g) as usize);
    if up.max(down) > 1000 {
        return Err(Error::invalid(format!("resampling ratio {up}/{down} is too large")));
    }
    Ok((up, down))
}

/// Hamming-windowed sinc lowpass at `1/max(up, down)` of the upsampled Nyquist,
/// scaled by `up`.
fn design_fir(up: usize, down: usize) -> (Vec<f64>, usize) {
    let m = up.max(down);
    let half = 10 * m;
    let fc = 1.0 / m as f64;
    let n = 2 * half + 1;
    let h = (0..n)
        .map(|k| {
            let t = k as f64 - half as f64;
            let sinc = if t == 0.0 {
                1.0
            } else {
                (PI * fc * t).sin() / (PI * fc * t)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * k as f64 / (n - 1) as f64).cos();
            up as f64 * fc * sinc * w
        })
        .collect();
    (h, half)
}

/// Polyphase rational resampling by `up / down` with a linear-phase FIR
/// (zero delay; output sample `m` sits at input time `m · down / up`).
pub fn resample_poly(x: &[f64], up: usize, down: usize) -> Vec<f64> {
    if up == down {
        return x.to_vec();
    }
    let (h, half) = design_fir(up, down);
    let n_up = x.len() * up;
    let n_out = n_up.div_ceil(down);
    (0..n_out)
        .map(|m| {
            let center = m * down + half;
            let mut acc = 0.0;
            let mut j = center % up;
            while j < h.len() {
                let i = center - j;
                if i < n_up {
                    acc += h[j] * x[i / up];
                }
                if j + up > center {
                    break;
                }
                j += up;
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(rational_ratio(1024.0, 400.0).unwrap(), (25, 64));
        assert_eq!(rational_ratio(512.0, 400.0).unwrap(), (25, 32));
        assert_eq!(rational_ratio(400.0, 400.0).unwrap(), (1, 1));
        assert!(rational_ratio(1000.5, 400.0).is_err());
    }

    #[test]
    fn tone_survives_resampling() {
        for fs in [512.0, 1024.0] {
            let (up, down) = rational_ratio(fs, 400.0).unwrap();
            let f = 37.0;
            let x: Vec<f64> = (0..(4.0 * fs) as usize)
                .map(|i| (2.0 * PI * f * i as f64 / fs).sin())
                .collect();
            let y = resample_poly(&x, up, down);
            assert_eq!(y.len(), 1600);
            for (m, v) in y.iter().enumerate().take(1400).skip(200) {
                let want = (2.0 * PI * f * m as f64 / 400.0).sin();
                assert!((v - want).abs() < 5e-3, "fs={fs} m={m}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn above_new_nyquist_is_attenuated() {
        let fs = 1024.0;
        let x: Vec<f64> = (0..4096).map(|i| (2.0 * PI * 300.0 * i as f64 / fs).sin()).collect();
        let y = resample_poly(&x, 25, 64);
        let rms = (y[200..1400].iter().map(|v| v * v).sum::<f64>() / 1200.0).sqrt();
        assert!(rms < 0.01, "{rms}");
    }
}
