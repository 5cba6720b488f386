use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial positional encoding scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PeScheme {
    /// Gaussian radial basis functions over each MNI coordinate.
    #[default]
    Rbf,
    /// sin/cos of each MNI coordinate at geometric frequencies.
    FourierMni,
    /// Transformer-style sin/cos of the electrode slot index.
    SinusoidalIndex,
    None,
}

impl std::str::FromStr for PeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(Self::Rbf),
            "fourier_mni" => Ok(Self::FourierMni),
            "sinusoidal_index" => Ok(Self::SinusoidalIndex),
            "none" => Ok(Self::None),
            other => Err(Error::invalid(format!(
                "unknown positional encoding '{other}' (expected rbf, fourier_mni, sinusoidal_index or none)"
            ))),
        }
    }
}

/// Components switched off for ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Ablations {
    /// Time attention.
    pub at: bool,
    /// Spatial positional encoding.
    pub pe: bool,
    /// Space attention.
    #[serde(rename = "as")]
    pub as_: bool,
    /// Subject-specific heads (replaced by one shared head).
    pub rh: bool,
}

impl std::str::FromStr for Ablations {
    type Err = Error;

    /// Comma-separated flags, e.g. `at,pe`.
    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablations::default();
        for flag in s.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            a.set(flag)?;
        }
        Ok(a)
    }
}

impl Ablations {
    pub fn set(&mut self, flag: &str) -> Result<()> {
        match flag {
            "at" => self.at = true,
            "pe" => self.pe = true,
            "as" => self.as_ = true,
            "rh" => self.rh = true,
            other => {
                return Err(Error::invalid(format!(
                    "unknown ablation '{other}' (expected at, pe, as or rh)"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Token dimension.
    pub k: usize,
    /// Input samples per trial.
    pub t_trial: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    /// Odd convolution kernel length ("same" padding).
    pub conv_kernel: usize,
    pub n_blocks: usize,
    /// Padded electrode capacity.
    pub e_max: usize,
    pub pe: PeScheme,
    /// Feature dimension after the trunk projection.
    pub d: usize,
    pub head_hidden: usize,
    /// Feed-forward width multiple inside attention blocks.
    pub ffn_mult: usize,
    pub ablate: Ablations,
    /// Replace each (time, space) pair by one attention over all electrode-time tokens.
    pub variant_2d: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 2,
            t_trial: 600,
            pool_window: 80,
            pool_stride: 5,
            conv_kernel: 11,
            n_blocks: 1,
            e_max: 28,
            pe: PeScheme::Rbf,
            d: 128,
            head_hidden: 16,
            ffn_mult: 4,
            ablate: Ablations::default(),
            variant_2d: false,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            ln_eps: 1e-5,
        }
    }
}

pub const RBF_CENTERS: [f64; 9] = [-90.0, -70.0, -50.0, -30.0, -10.0, 10.0, 30.0, 50.0, 70.0];
pub const RBF_VARIANCES: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
pub const FOURIER_FREQS: usize = 8;
pub const SINUSOIDAL_DIM: usize = 16;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("model config: {m}")));
        if self.k == 0 || self.d == 0 || self.head_hidden == 0 || self.ffn_mult == 0 || self.e_max == 0 {
            return bad("k, d, head_hidden, ffn_mult and e_max must be positive");
        }
        if self.conv_kernel % 2 == 0 {
            return bad("conv_kernel must be odd for same padding");
        }
        if self.pool_window == 0 || self.pool_stride == 0 || self.pool_window > self.t_trial {
            return bad("pooling window must fit in the trial");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 || self.ln_eps <= 0.0 {
            return bad("bn_momentum must lie in [0, 1] and eps values must be positive");
        }
        Ok(())
    }

    /// Temporal tokens after pooling.
    pub fn n_tokens(&self) -> usize {
        (self.t_trial - self.pool_window) / self.pool_stride + 1
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_mult * self.k
    }

    /// Width of the unrolled latent fed to the trunk projection.
    pub fn trunk_in(&self) -> usize {
        self.e_max * self.n_tokens() * self.k
    }

    pub fn uses_time(&self) -> bool {
        !self.variant_2d && !self.ablate.at
    }

    pub fn uses_space(&self) -> bool {
        !self.variant_2d && !self.ablate.as_
    }

    pub fn effective_pe(&self) -> PeScheme {
        if self.variant_2d || self.ablate.pe {
            PeScheme::None
        } else {
            self.pe
        }
    }

    /// Positional feature length before projection to `k`.
    pub fn pe_features(&self) -> usize {
        match self.effective_pe() {
            PeScheme::Rbf => 3 * RBF_CENTERS.len() * RBF_VARIANCES.len(),
            PeScheme::FourierMni => 3 * 2 * FOURIER_FREQS,
            PeScheme::SinusoidalIndex => SINUSOIDAL_DIM,
            PeScheme::None => 0,
        }
    }

    /// Attention-score multiply-accumulates (`QKᵀ` entries × `k`) for a batch
    /// of `batch` trials with `electrodes` electrodes each, summed over blocks.
    pub fn attention_flops(&self, batch: usize, electrodes: usize) -> u128 {
        let (b, e, t, k) = (
            batch as u128,
            electrodes as u128,
            self.n_tokens() as u128,
            self.k as u128,
        );
        let per_block = if self.variant_2d {
            b * (e * t) * (e * t) * k
        } else {
            let time = if self.uses_time() { e * t * t * k } else { 0 };
            let space = if self.uses_space() { t * e * e * k } else { 0 };
            b * (time + space)
        };
        per_block * self.n_blocks as u128
    }

    /// Sequence length of the joint attention in the 2D variant.
    pub fn joint_sequence(&self, electrodes: usize) -> usize {
        electrodes * self.n_tokens()
    }
}
