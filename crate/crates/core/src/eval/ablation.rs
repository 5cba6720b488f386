use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::MeanSem;
use super::report::{evaluate, SubjectScore};
use crate::cohort::{SplitAssignment, SplitLabel};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamCounts};
use crate::sigproc::ProcessedCohort;
use crate::train::{train, Mode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoAt,
    NoPe,
    NoAs,
    NoRh,
    TwoD,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Self::Full, Self::NoAt, Self::NoPe, Self::NoAs, Self::NoRh, Self::TwoD];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoAt => "-at",
            Self::NoPe => "-pe",
            Self::NoAs => "-as",
            Self::NoRh => "-rh",
            Self::TwoD => "2d",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().trim_start_matches('-') == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?} (full | at | pe | as | rh | 2d)")))
    }
}

/// `base` with exactly one component removed (or swapped for joint 2D
/// attention); other ablation flags on `base` are cleared.
pub fn variant_config(base: &ModelConfig, v: Variant) -> ModelConfig {
    let mut c = base.clone();
    c.ablate = Default::default();
    c.variant_2d = false;
    match v {
        Variant::Full => {}
        Variant::NoAt => c.ablate.at = true,
        Variant::NoPe => c.ablate.pe = true,
        Variant::NoAs => c.ablate.as_ = true,
        Variant::NoRh => c.ablate.rh = true,
        Variant::TwoD => c.variant_2d = true,
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub subjects: Vec<SubjectScore>,
    pub mean_r2: MeanSem,
    pub pooled_r2: f64,
    /// Attention-score multiply-accumulates for one trial with `e_max`
    /// electrodes.
    pub attention_flops: u128,
    pub parameters: ParamCounts,
    pub mean_epoch_seconds: f64,
    pub best_epoch: usize,
}

/// Multi-subject training of each variant with identical hyperparameters,
/// scored on the test trials.
pub fn ablation_suite(
    base: &ModelConfig,
    cohort: &ProcessedCohort,
    split: &SplitAssignment,
    cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&v| {
            let config = variant_config(base, v);
            log::info!("ablation: training variant {v}");
            let (model, history) = train(&config, cohort, split, cfg, Mode::MultiSubject)?;
            let report = evaluate(&model, cohort, split, SplitLabel::Test)?;
            let secs: Vec<f64> = history.records.iter().map(|r| r.seconds).collect();
            Ok(AblationRow {
                variant: v,
                subjects: report.subjects,
                mean_r2: report.mean_r2,
                pooled_r2: report.pooled_r2,
                attention_flops: config.attention_flops(1, config.e_max),
                parameters: model.count_parameters(),
                mean_epoch_seconds: secs.iter().sum::<f64>() / secs.len().max(1) as f64,
                best_epoch: history.best_epoch,
            })
        })
        .collect()
}

/// Long-format table, one line per variant and subject.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "variant,subject,r2,rmse_ms,mean_r2,sem_r2,pooled_r2,attention_flops,shared_params,subject_specific_params,mean_epoch_seconds\n",
    );
    for r in rows {
        for sub in &r.subjects {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.variant,
                sub.subject_id,
                sub.r2,
                sub.rmse_ms,
                r.mean_r2.mean,
                r.mean_r2.sem,
                r.pooled_r2,
                r.attention_flops,
                r.parameters.shared,
                r.parameters.subject_specific,
                r.mean_epoch_seconds
            ));
        }
    }
    s
}
