use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::latency::LatencyStats;
use super::metrics::{mean_sem, r2, rmse, MeanSem};
use crate::cohort::{SplitAssignment, SplitLabel};
use crate::error::{Error, Result};
use crate::model::{cohort_inputs, Model, ParamCounts};
use crate::sigproc::ProcessedCohort;

/// Scores of one subject's trials under one split label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject_id: String,
    pub r2: f64,
    pub rmse_ms: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `seegnet` or a baseline description.
    pub model: String,
    /// SHA-256 of the model or baseline configuration JSON.
    pub config_hash: String,
    /// SHA-256 of the parameter values; absent for closed-form baselines.
    pub params_hash: Option<String>,
    pub split_seed: u64,
    pub label: SplitLabel,
    pub pooled_r2: f64,
    pub pooled_rmse_ms: f64,
    pub subjects: Vec<SubjectScore>,
    pub mean_r2: MeanSem,
    pub mean_rmse_ms: MeanSem,
    pub parameters: Option<ParamCounts>,
    pub latency: Option<LatencyStats>,
}

/// Per-subject predictions and targets, in ms.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPredictions {
    pub subject_id: String,
    pub pred: Vec<f64>,
    pub target: Vec<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_vec(config).map_err(|e| Error::invalid(format!("serializing config: {e}")))?;
    Ok(sha256_hex(&json))
}

/// Hash of the subject order and every parameter value's bit pattern.
pub fn params_hash(model: &Model) -> String {
    let mut h = Sha256::new();
    for s in &model.subjects {
        h.update(s.as_bytes());
        h.update([0]);
    }
    for v in &model.params.values {
        h.update(v.to_le_bytes());
    }
    h.update(model.scaler.mean.to_le_bytes());
    h.update(model.scaler.sd.to_le_bytes());
    hex::encode(h.finalize())
}

impl EvalReport {
    pub fn from_predictions(
        model: impl Into<String>,
        config_hash: String,
        params_hash: Option<String>,
        split_seed: u64,
        label: SplitLabel,
        per_subject: &[SubjectPredictions],
    ) -> Result<Self> {
        if per_subject.is_empty() {
            return Err(Error::invalid("evaluation needs at least one subject"));
        }
        let mut subjects = Vec::with_capacity(per_subject.len());
        let (mut all_pred, mut all_target) = (Vec::new(), Vec::new());
        for s in per_subject {
            subjects.push(SubjectScore {
                subject_id: s.subject_id.clone(),
                r2: r2(&s.pred, &s.target)?,
                rmse_ms: rmse(&s.pred, &s.target)?,
                n_trials: s.target.len(),
            });
            all_pred.extend_from_slice(&s.pred);
            all_target.extend_from_slice(&s.target);
        }
        let r2s: Vec<f64> = subjects.iter().map(|s| s.r2).collect();
        let rmses: Vec<f64> = subjects.iter().map(|s| s.rmse_ms).collect();
        Ok(Self {
            model: model.into(),
            config_hash,
            params_hash,
            split_seed,
            label,
            pooled_r2: r2(&all_pred, &all_target)?,
            pooled_rmse_ms: rmse(&all_pred, &all_target)?,
            subjects,
            mean_r2: mean_sem(&r2s)?,
            mean_rmse_ms: mean_sem(&rmses)?,
            parameters: None,
            latency: None,
        })
    }

    /// One row per subject: `subject,r2,rmse_ms,n_trials`.
    pub fn subjects_csv(&self) -> String {
        let mut s = String::from("subject,r2,rmse_ms,n_trials\n");
        for r in &self.subjects {
            s.push_str(&format!("{},{},{},{}\n", r.subject_id, r.r2, r.rmse_ms, r.n_trials));
        }
        s
    }
}

/// Eval-mode predictions of `model` for the `label` trials of the listed
/// cohort subjects.
pub fn model_predictions(
    model: &Model,
    cohort: &ProcessedCohort,
    split: &SplitAssignment,
    label: SplitLabel,
    subjects: &[usize],
) -> Result<Vec<SubjectPredictions>> {
    if split.labels.len() != cohort.subjects.len() {
        return Err(Error::ShapeMismatch {
            context: "split".into(),
            detail: format!(
                "{} subjects in split, {} in cohort",
                split.labels.len(),
                cohort.subjects.len()
            ),
        });
    }
    subjects
        .iter()
        .map(|&s| {
            let picks: Vec<(usize, usize)> = split.indices(s, label).into_iter().map(|t| (s, t)).collect();
            let inputs = cohort_inputs(model, cohort, &picks)?;
            Ok(SubjectPredictions {
                subject_id: cohort.subjects[s].subject_id.clone(),
                pred: model.predict(&inputs)?,
                target: picks.iter().map(|&(s, t)| cohort.subjects[s].rts_ms[t]).collect(),
            })
        })
        .collect()
}

/// Score `model` on every cohort subject it has a head for.
pub fn evaluate(
    model: &Model,
    cohort: &ProcessedCohort,
    split: &SplitAssignment,
    label: SplitLabel,
) -> Result<EvalReport> {
    let subjects: Vec<usize> = (0..cohort.subjects.len())
        .filter(|&s| model.head_index(&cohort.subjects[s].subject_id).is_ok())
        .collect();
    if subjects.is_empty() {
        return Err(Error::invalid("the model has no head for any cohort subject"));
    }
    let preds = model_predictions(model, cohort, split, label, &subjects)?;
    let mut report = EvalReport::from_predictions(
        "seegnet",
        config_hash(&model.config)?,
        Some(params_hash(model)),
        split.seed,
        label,
        &preds,
    )?;
    report.parameters = Some(model.count_parameters());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(id: &str, pred: &[f64], target: &[f64]) -> SubjectPredictions {
        SubjectPredictions {
            subject_id: id.into(),
            pred: pred.to_vec(),
            target: target.to_vec(),
        }
    }

    #[test]
    fn pooled_and_per_subject_scores() {
        let a = preds("a", &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        let b = preds("b", &[10.0, 10.0], &[9.0, 11.0]);
        let r = EvalReport::from_predictions("x", "h".into(), None, 4, SplitLabel::Test, &[a, b]).unwrap();
        assert_eq!(r.subjects[0].r2, 1.0);
        assert_eq!(r.subjects[1].r2, 0.0);
        assert!((r.mean_r2.mean - 0.5).abs() < 1e-15);
        let direct = r2(&[1.0, 2.0, 3.0, 10.0, 10.0], &[1.0, 2.0, 3.0, 9.0, 11.0]).unwrap();
        assert_eq!(r.pooled_r2, direct);
        assert!((r.pooled_rmse_ms - (2.0f64 / 5.0).sqrt()).abs() < 1e-15);
        assert!(r.subjects_csv().starts_with("subject,r2,rmse_ms,n_trials\na,1,0,3\n"));
    }

    #[test]
    fn hashes_track_content() {
        let m = Model::<f32>::new(crate::model::ModelConfig::default(), vec!["a".into()], 0).unwrap();
        let mut m2 = m.clone();
        assert_eq!(params_hash(&m), params_hash(&m2));
        m2.params.values[0] += 1.0;
        assert_ne!(params_hash(&m), params_hash(&m2));
        assert_eq!(config_hash(&m.config).unwrap(), config_hash(&m2.config).unwrap());
        assert_eq!(sha256_hex(b"abc").len(), 64);
        assert!(sha256_hex(b"abc").starts_with("ba7816bf"));
    }
}
