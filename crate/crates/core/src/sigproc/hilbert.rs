use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Analytic signal `x + i·H[x]` via the FFT (same length as `x`).
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= h / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Magnitude of the analytic signal.
pub fn hilbert_envelope(x: &[f64]) -> Vec<f64> {
    analytic_signal(x).into_iter().map(|c| c.norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pure_tone_envelope_is_flat() {
        let fs = 1024.0;
        let a = 3.5;
        let x: Vec<f64> = (0..2048)
            .map(|i| a * (2.0 * PI * 100.0 * i as f64 / fs).sin())
            .collect();
        let env = hilbert_envelope(&x);
        for v in &env[200..1848] {
            assert!((v - a).abs() / a < 0.01);
        }
    }

    #[test]
    fn am_tone_envelope_tracks_modulator() {
        let fs = 1024.0;
        let m = |t: f64| 1.0 + 0.5 * (2.0 * PI * 2.0 * t).sin();
        let x: Vec<f64> = (0..2048)
            .map(|i| {
                let t = i as f64 / fs;
                m(t) * (2.0 * PI * 100.0 * t).sin()
            })
            .collect();
        let env = hilbert_envelope(&x);
        for (i, v) in env.iter().enumerate().take(1848).skip(200) {
            let want = m(i as f64 / fs);
            assert!((v - want).abs() / want < 0.02, "i={i} {v} vs {want}");
        }
    }

    #[test]
    fn odd_length_and_zero() {
        assert!(hilbert_envelope(&[0.0; 17]).iter().all(|v| *v == 0.0));
        let x: Vec<f64> = (0..101).map(|i| (i as f64 * 0.7).cos()).collect();
        let a = analytic_signal(&x);
        for (xi, ai) in x.iter().zip(&a) {
            assert!((xi - ai.re).abs() < 1e-12);
        }
    }
}
