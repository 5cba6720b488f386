//! Positional features of an electrode, before the learned projection to `k`.

use std::f64::consts::PI;

use super::config::{ModelConfig, PeScheme, FOURIER_FREQS, RBF_CENTERS, RBF_VARIANCES, SINUSOIDAL_DIM};

/// Gaussian densities of each coordinate under every (centre, variance) pair,
/// ordered coordinate-major, then centre, then variance.
pub fn rbf_features(mni: [f64; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * RBF_CENTERS.len() * RBF_VARIANCES.len());
    for s in mni {
        for mu in RBF_CENTERS {
            for var in RBF_VARIANCES {
                out.push((-(s - mu).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt());
            }
        }
    }
    out
}

/// `sin(ω_j s), cos(ω_j s)` per coordinate with `ω_j = 2π/200 · 2^j`.
pub fn fourier_mni_features(mni: [f64; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * 2 * FOURIER_FREQS);
    for s in mni {
        for j in 0..FOURIER_FREQS {
            let w = 2.0 * PI / 200.0 * (1u32 << j) as f64;
            out.push((w * s).sin());
            out.push((w * s).cos());
        }
    }
    out
}

/// Transformer sinusoidal encoding of the electrode slot index.
pub fn sinusoidal_index_features(index: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(SINUSOIDAL_DIM);
    for i in 0..SINUSOIDAL_DIM / 2 {
        let a = index as f64 / 10_000f64.powf(2.0 * i as f64 / SINUSOIDAL_DIM as f64);
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

pub fn pe_features(config: &ModelConfig, slot: usize, mni: [f64; 3]) -> Vec<f64> {
    match config.effective_pe() {
        PeScheme::Rbf => rbf_features(mni),
        PeScheme::FourierMni => fourier_mni_features(mni),
        PeScheme::SinusoidalIndex => sinusoidal_index_features(slot),
        PeScheme::None => Vec::new(),
    }
}
