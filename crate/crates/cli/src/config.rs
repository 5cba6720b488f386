use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seegnet::cohort::SynthConfig;
use seegnet::model::{ModelConfig, PeScheme};
use seegnet::sigproc::PreprocessConfig;
use seegnet::train::TrainConfig;

/// Settings file (JSON, or TOML by `.toml` extension). Every section is
/// optional and falls back to defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Transfer recipe; defaults to `train`.
    pub transfer: Option<TrainConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        };
        Ok(cfg)
    }

    /// One seed for every random stream of the run.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.preprocess.seed = seed;
        self.train.seed = seed;
        if let Some(t) = &mut self.transfer {
            t.seed = seed;
        }
    }

    pub fn transfer_cfg(&self) -> TrainConfig {
        self.transfer.clone().unwrap_or_else(|| self.train.clone())
    }

    pub fn apply_model_flags(&mut self, ablate: &[String], variant_2d: bool, pe: Option<&str>) -> Result<()> {
        for a in ablate {
            self.model.ablate.set(a)?;
        }
        if variant_2d {
            self.model.variant_2d = true;
        }
        if let Some(pe) = pe {
            self.model.pe = pe.parse::<PeScheme>()?;
        }
        if self.model.variant_2d && self.model.ablate != Default::default() {
            bail!("--variant-2d cannot be combined with ablation flags");
        }
        Ok(())
    }
}
