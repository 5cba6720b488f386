//! Per-subject reference decoders: standardize → PCA → linear regressor on
//! the flattened trial window, a dense MLP on downsampled signals, and a
//! convolution + MLP built from the network with its attention stages and
//! positional encoding removed.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::report::{config_hash, evaluate, EvalReport, SubjectPredictions};
use crate::cohort::{SplitAssignment, SplitLabel};
use crate::error::{Error, Result};
use crate::model::{Ablations, ModelConfig, ParamStore, Role, TargetScaler, TensorInfo};
use crate::rng;
use crate::sigproc::{rational_ratio, resample_poly, ProcessedCohort, PROCESSED_RATE_HZ, TRIAL_SAMPLES};
use crate::train::{sample_loss, train, AdamW, LossKind, Mode, TrainConfig, TrainHistory};

pub const ALPHAS: [f64; 3] = [0.1, 1.0, 10.0];
pub const PCA_VARIANCE: f64 = 0.95;
pub const MLP_RATE_HZ: f64 = 140.0;
pub const MLP_HIDDEN: [usize; 3] = [256, 128, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Wiener,
    Ridge,
    Lasso,
    Mlp,
    CnnMlp,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [Self::Wiener, Self::Ridge, Self::Lasso, Self::Mlp, Self::CnnMlp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Wiener => "wiener",
            Self::Ridge => "ridge",
            Self::Lasso => "lasso",
            Self::Mlp => "mlp",
            Self::CnnMlp => "cnn_mlp",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown baseline {s:?} (wiener | ridge | lasso | mlp | cnn_mlp)"
            ))
        })
    }
}

/// Column standardization with population standard deviation; constant
/// columns are only centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x.row_mean().transpose();
        let scale = DVector::from_iterator(
            x.ncols(),
            x.column_iter().zip(mean.iter()).map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            }),
        );
        Self { mean, scale }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
            col /= self.scale[j];
        }
        z
    }
}

/// Principal components of centered data, largest variance first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `features × components`, orthonormal columns.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl Pca {
    /// Keep the fewest components whose variance share reaches `fraction`
    /// (`fraction ≥ 1` keeps every non-degenerate component). Directions with
    /// numerically zero variance are always dropped.
    pub fn fit(x: &DMatrix<f64>, fraction: f64) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 || p == 0 {
            return Err(Error::invalid(format!(
                "PCA needs at least 2 rows and 1 column, got {n}x{p}"
            )));
        }
        let mean = x.row_mean().transpose();
        let mut xc = x.clone();
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        // Eigen-decompose the smaller of XᵀX and XXᵀ.
        let (vals, vecs) = if p <= n {
            let e = SymmetricEigen::new(xc.transpose() * &xc);
            (e.eigenvalues, e.eigenvectors)
        } else {
            let e = SymmetricEigen::new(&xc * xc.transpose());
            (e.eigenvalues, e.eigenvectors)
        };
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        let top = vals[order[0]].max(0.0);
        let tol = top * n.max(p) as f64 * f64::EPSILON;
        let kept: Vec<usize> = order.into_iter().filter(|&i| vals[i] > tol).collect();
        if kept.is_empty() {
            return Err(Error::ZeroVariance("PCA input is constant".into()));
        }
        let total: f64 = kept.iter().map(|&i| vals[i]).sum();
        let mut k = kept.len();
        if fraction < 1.0 {
            let mut acc = 0.0;
            for (c, &i) in kept.iter().enumerate() {
                acc += vals[i];
                if acc >= fraction * total {
                    k = c + 1;
                    break;
                }
            }
        }
        let mut components = DMatrix::zeros(p, k);
        for (c, &i) in kept[..k].iter().enumerate() {
            let v = if p <= n {
                vecs.column(i).into_owned()
            } else {
                xc.transpose() * vecs.column(i) / vals[i].sqrt()
            };
            components.set_column(c, &v);
        }
        let dof = (n - 1) as f64;
        Ok(Self {
            mean,
            components,
            explained_variance: kept[..k].iter().map(|&i| vals[i] / dof).collect(),
            total_variance: total / dof,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut xc = x.clone();
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        xc * &self.components
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = z * self.components.transpose();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    /// Ordinary least squares.
    Wiener,
    /// Minimizes `‖y − Zw‖² + α‖w‖²`.
    Ridge(f64),
    /// Minimizes `‖y − Zw‖² / (2n) + α‖w‖₁`.
    Lasso(f64),
}

/// Linear fit `y ≈ Zw + b` with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coef: DVector<f64>,
    pub intercept: f64,
}

impl LinearFit {
    pub fn predict(&self, z: &DMatrix<f64>) -> Vec<f64> {
        (z * &self.coef).iter().map(|v| v + self.intercept).collect()
    }

    pub fn nonzero(&self, threshold: f64) -> usize {
        self.coef.iter().filter(|w| w.abs() > threshold).count()
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

pub fn fit_regressor(kind: Regressor, z: &DMatrix<f64>, y: &[f64]) -> Result<LinearFit> {
    let (n, k) = z.shape();
    if n != y.len() || n == 0 {
        return Err(Error::ShapeMismatch {
            context: "regression".into(),
            detail: format!("{n} rows for {} targets", y.len()),
        });
    }
    let z_mean = z.row_mean().transpose();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut zc = z.clone();
    for (j, mut col) in zc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-z_mean[j]);
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let coef = match kind {
        Regressor::Wiener => zc
            .clone()
            .svd(true, true)
            .solve(&yc, 1e-12)
            .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?,
        Regressor::Ridge(alpha) => {
            let mut a = zc.transpose() * &zc;
            for i in 0..k {
                a[(i, i)] += alpha;
            }
            a.cholesky()
                .ok_or_else(|| Error::invalid(format!("ridge system with alpha {alpha} is not positive definite")))?
                .solve(&(zc.transpose() * &yc))
        }
        Regressor::Lasso(alpha) => lasso_cd(&zc, &yc, alpha),
    };
    let intercept = y_mean - z_mean.dot(&coef);
    Ok(LinearFit { coef, intercept })
}

/// Cyclic coordinate descent on centered data.
fn lasso_cd(z: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> DVector<f64> {
    const MAX_SWEEPS: usize = 10_000;
    const TOL: f64 = 1e-10;
    let (n, k) = z.shape();
    let nf = n as f64;
    let norms: Vec<f64> = z.column_iter().map(|c| c.norm_squared() / nf).collect();
    let mut w = DVector::<f64>::zeros(k);
    let mut r = y.clone();
    for _ in 0..MAX_SWEEPS {
        let mut max_step: f64 = 0.0;
        for j in 0..k {
            if norms[j] == 0.0 {
                continue;
            }
            let col = z.column(j);
            let rho = col.dot(&r) / nf + norms[j] * w[j];
            let new = soft_threshold(rho, alpha) / norms[j];
            let step: f64 = new - w[j];
            if step != 0.0 {
                r.axpy(-step, &col, 1.0);
                w[j] = new;
                max_step = max_step.max(step.abs());
            }
        }
        if max_step <= TOL * (1.0 + w.amax()) {
            break;
        }
    }
    w
}

/// Index of the best validation score, the first on ties.
pub fn select_alpha(val_r2: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in val_r2.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        if best.is_none_or(|b| *v > val_r2[b]) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::invalid("no finite validation score in the alpha sweep"))
}

/// Fitted standardize → PCA → regressor chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPipeline {
    pub scaler: Standardizer,
    pub pca: Pca,
    pub regressor: Regressor,
    pub fit: LinearFit,
    /// `(alpha, validation R²)` for each swept alpha.
    pub sweep: Vec<(f64, f64)>,
}

impl LinearPipeline {
    /// Ridge and lasso pick `alpha` from `alphas` by validation R².
    pub fn fit(
        kind: BaselineKind,
        x_train: &DMatrix<f64>,
        y_train: &[f64],
        x_val: &DMatrix<f64>,
        y_val: &[f64],
        alphas: &[f64],
    ) -> Result<Self> {
        let make: fn(f64) -> Regressor = match kind {
            BaselineKind::Wiener => |_| Regressor::Wiener,
            BaselineKind::Ridge => Regressor::Ridge,
            BaselineKind::Lasso => Regressor::Lasso,
            other => return Err(Error::invalid(format!("{other} is not a linear baseline"))),
        };
        let scaler = Standardizer::fit(x_train);
        let pca = Pca::fit(&scaler.transform(x_train), PCA_VARIANCE)?;
        let z_train = pca.transform(&scaler.transform(x_train));
        let z_val = pca.transform(&scaler.transform(x_val));
        if kind == BaselineKind::Wiener {
            let fit = fit_regressor(Regressor::Wiener, &z_train, y_train)?;
            return Ok(Self {
                scaler,
                pca,
                regressor: Regressor::Wiener,
                fit,
                sweep: Vec::new(),
            });
        }
        if alphas.is_empty() {
            return Err(Error::invalid("alpha sweep is empty"));
        }
        let mut fits = Vec::with_capacity(alphas.len());
        let mut scores = Vec::with_capacity(alphas.len());
        for &a in alphas {
            let fit = fit_regressor(make(a), &z_train, y_train)?;
            scores.push(super::r2(&fit.predict(&z_val), y_val)?);
            fits.push(fit);
        }
        let best = select_alpha(&scores)?;
        Ok(Self {
            scaler,
            pca,
            regressor: make(alphas[best]),
            fit: fits.swap_remove(best),
            sweep: alphas.iter().copied().zip(scores).collect(),
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.fit.predict(&self.pca.transform(&self.scaler.transform(x)))
    }
}

/// Flattened `[electrode][sample]` windows of one subject's trials.
pub fn flatten_trials(cohort: &ProcessedCohort, subject: usize, trials: &[usize]) -> DMatrix<f64> {
    let s = &cohort.subjects[subject];
    let w = s.n_electrodes() * TRIAL_SAMPLES;
    DMatrix::from_row_iterator(
        trials.len(),
        w,
        trials.iter().flat_map(|&t| s.trial(t).iter().map(|v| *v as f64)),
    )
}

/// Dense ReLU network trained with the single-subject recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub params: ParamStore<f32>,
    pub scaler: TargetScaler,
}

impl Mlp {
    pub fn new(widths: Vec<usize>, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("bad MLP widths {widths:?}")));
        }
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (i, w) in widths.windows(2).enumerate() {
            for (suffix, shape) in [("weight", vec![w[1], w[0]]), ("bias", vec![w[1]])] {
                let len = shape.iter().product();
                tensors.push(TensorInfo {
                    name: format!("mlp.fc{i}.{suffix}"),
                    shape,
                    offset,
                    len,
                    role: Role::Shared,
                });
                offset += len;
            }
        }
        let mut values = vec![0f32; offset];
        for (l, pair) in tensors.chunks(2).enumerate() {
            let bound = 1.0 / (widths[l] as f64).sqrt();
            let mut r = rng::stream(seed, "mlp-init", l as u64);
            for t in pair {
                for v in &mut values[t.offset..t.offset + t.len] {
                    *v = r.random_range(-bound..bound) as f32;
                }
            }
        }
        Ok(Self {
            widths,
            params: ParamStore { values, tensors },
            scaler: TargetScaler { mean: 0.0, sd: 1.0 },
        })
    }

    fn layer(&self, l: usize) -> (&[f32], &[f32]) {
        let (w, b) = (&self.params.tensors[2 * l], &self.params.tensors[2 * l + 1]);
        (
            &self.params.values[w.offset..w.offset + w.len],
            &self.params.values[b.offset..b.offset + b.len],
        )
    }

    /// Activations of every layer, input first; the last is the output.
    fn forward(&self, x: &[f32]) -> Vec<Vec<f32>> {
        let n_layers = self.widths.len() - 1;
        let mut acts = vec![x.to_vec()];
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let a = &acts[l];
            let out: Vec<f32> = b
                .iter()
                .enumerate()
                .map(|(o, bias)| {
                    let z = bias + crate::model::layers::dot(&w[o * a.len()..(o + 1) * a.len()], a);
                    if l + 1 < n_layers {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    fn backward(&self, acts: &[Vec<f32>], dy: f32, grads: &mut [f32]) {
        let n_layers = self.widths.len() - 1;
        let mut delta = vec![dy];
        for l in (0..n_layers).rev() {
            let (w, _) = self.layer(l);
            let (wt, bt) = (&self.params.tensors[2 * l], &self.params.tensors[2 * l + 1]);
            let a = &acts[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                grads[bt.offset + o] += d;
                for (g, x) in grads[wt.offset + o * a.len()..wt.offset + (o + 1) * a.len()]
                    .iter_mut()
                    .zip(a)
                {
                    *g += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0f32; a.len()];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, wv) in prev.iter_mut().zip(&w[o * a.len()..(o + 1) * a.len()]) {
                    *p += d * wv;
                }
            }
            // ReLU derivative of the hidden layer feeding this one.
            for (p, x) in prev.iter_mut().zip(a) {
                if *x <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn predict_std(&self, x: &[f32]) -> f32 {
        self.forward(x).pop().expect("output layer")[0]
    }

    pub fn predict(&self, xs: &[Vec<f32>]) -> Vec<f64> {
        xs.iter()
            .map(|x| self.scaler.to_ms(self.predict_std(x) as f64))
            .collect()
    }

    /// Mean loss and summed-then-averaged gradients of a batch.
    pub fn gradients(&self, xs: &[&[f32]], ys: &[f32], loss: impl Fn(f32, f32) -> (f32, f32)) -> (f64, Vec<f32>) {
        let mut grads = vec![0f32; self.params.len()];
        let inv = 1.0 / xs.len() as f32;
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let acts = self.forward(x);
            let (l, dl) = loss(acts[acts.len() - 1][0], *y);
            total += l as f64;
            self.backward(&acts, dl * inv, &mut grads);
        }
        (total / xs.len() as f64, grads)
    }

    /// Huber on standardized targets, single-subject schedule and batch size,
    /// best-validation restore.
    pub fn train(
        &mut self,
        x_train: &[Vec<f32>],
        y_train: &[f64],
        x_val: &[Vec<f32>],
        y_val: &[f64],
        cfg: &TrainConfig,
    ) -> Result<TrainHistory> {
        cfg.validate()?;
        if x_train.is_empty() || x_train.len() != y_train.len() || x_val.len() != y_val.len() {
            return Err(Error::invalid("MLP training data is empty or misaligned"));
        }
        self.scaler = TargetScaler::fit(y_train)?;
        let ys: Vec<f32> = y_train.iter().map(|v| self.scaler.to_std(*v) as f32).collect();
        let yv: Vec<f32> = y_val.iter().map(|v| self.scaler.to_std(*v) as f32).collect();
        let f = sample_loss::<f32>(LossKind::Huber, cfg.huber_delta);
        let mut opt = AdamW::new(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
        let mut history = TrainHistory::new(LossKind::Huber);
        let mut best: Option<Vec<f32>> = None;
        for epoch in 0..cfg.epochs {
            let start = std::time::Instant::now();
            let lr = cfg.single_schedule.lr(cfg.lr, epoch);
            let mut order: Vec<usize> = (0..x_train.len()).collect();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng::stream(cfg.seed, "mlp-shuffle", epoch as u64));
            let mut total = 0.0;
            for idx in order.chunks(cfg.single_batch) {
                let xs: Vec<&[f32]> = idx.iter().map(|&i| x_train[i].as_slice()).collect();
                let y: Vec<f32> = idx.iter().map(|&i| ys[i]).collect();
                let (l, g) = self.gradients(&xs, &y, f);
                if !l.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("MLP training loss is {l}"),
                    });
                }
                total += l * idx.len() as f64;
                opt.step(&mut self.params, &g, lr, |_| true);
            }
            let train_loss = total / x_train.len() as f64;
            let val_loss = if x_val.is_empty() {
                train_loss
            } else {
                x_val
                    .iter()
                    .zip(&yv)
                    .map(|(x, y)| f(self.predict_std(x), *y).0 as f64)
                    .sum::<f64>()
                    / x_val.len() as f64
            };
            if val_loss < history.best_val_loss {
                history.best_val_loss = val_loss;
                history.best_epoch = epoch;
                best = Some(self.params.values.clone());
            }
            history.records.push(crate::train::EpochRecord {
                epoch,
                train_loss,
                val_loss,
                lr,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        if let Some(v) = best {
            self.params.values = v;
        }
        Ok(history)
    }
}

/// MLP input: each electrode resampled to [`MLP_RATE_HZ`] and placed in its
/// slot of an `e_max`-slot vector (absent slots zero).
pub fn mlp_inputs(cohort: &ProcessedCohort, subject: usize, trials: &[usize], e_max: usize) -> Result<Vec<Vec<f32>>> {
    let s = &cohort.subjects[subject];
    if s.n_electrodes() > e_max {
        return Err(Error::invalid(format!(
            "subject {} has {} electrodes, more than {e_max} slots",
            s.subject_id,
            s.n_electrodes()
        )));
    }
    let (up, down) = rational_ratio(PROCESSED_RATE_HZ, MLP_RATE_HZ)?;
    let per = (TRIAL_SAMPLES * up).div_ceil(down);
    Ok(trials
        .iter()
        .map(|&t| {
            let mut x = vec![0f32; e_max * per];
            for (e, sig) in s.trial(t).chunks_exact(TRIAL_SAMPLES).enumerate() {
                let sig: Vec<f64> = sig.iter().map(|v| *v as f64).collect();
                for (d, v) in x[e * per..(e + 1) * per].iter_mut().zip(resample_poly(&sig, up, down)) {
                    *d = v as f32;
                }
            }
            x
        })
        .collect())
}

/// Width of the MLP input for `e_max` slots.
pub fn mlp_input_len(e_max: usize) -> Result<usize> {
    let (up, down) = rational_ratio(PROCESSED_RATE_HZ, MLP_RATE_HZ)?;
    Ok(e_max * (TRIAL_SAMPLES * up).div_ceil(down))
}

/// Network config of the convolution + MLP baseline: tokenizer, trunk
/// projection and head, with attention and positional encoding removed.
pub fn cnn_mlp_config(base: &ModelConfig) -> ModelConfig {
    ModelConfig {
        variant_2d: false,
        ablate: Ablations {
            at: true,
            pe: true,
            as_: true,
            rh: false,
        },
        ..base.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub report: EvalReport,
    /// Selected penalty for ridge and lasso.
    pub alpha: Option<f64>,
    pub n_components: Option<usize>,
    pub history: Option<TrainHistory>,
}

#[derive(Serialize)]
struct BaselineIdentity<'a> {
    kind: BaselineKind,
    pca_variance: f64,
    alphas: &'a [f64],
    mlp_rate_hz: f64,
    mlp_hidden: &'a [usize],
    train: &'a TrainConfig,
    model: &'a ModelConfig,
}

/// Fit one baseline on `subject`'s train (and validation) trials and score
/// its test trials. Deep kinds use `model_cfg.e_max` slots.
pub fn baseline(
    kind: BaselineKind,
    cohort: &ProcessedCohort,
    split: &SplitAssignment,
    subject: &str,
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<BaselineOutcome> {
    let s = cohort
        .subject_index(subject)
        .ok_or_else(|| Error::UnknownSubject(subject.to_string()))?;
    if split.labels.len() != cohort.subjects.len() || split.labels[s].len() != cohort.subjects[s].n_trials() {
        return Err(Error::ShapeMismatch {
            context: format!("split of {subject}"),
            detail: "split labels do not match the cohort".into(),
        });
    }
    let idx = |l| split.indices(s, l);
    let (tr, va, te) = (idx(SplitLabel::Train), idx(SplitLabel::Val), idx(SplitLabel::Test));
    let rts = |ids: &[usize]| -> Vec<f64> { ids.iter().map(|&t| cohort.subjects[s].rts_ms[t]).collect() };
    let identity = BaselineIdentity {
        kind,
        pca_variance: PCA_VARIANCE,
        alphas: &ALPHAS,
        mlp_rate_hz: MLP_RATE_HZ,
        mlp_hidden: &MLP_HIDDEN,
        train: train_cfg,
        model: model_cfg,
    };
    let hash = config_hash(&identity)?;
    let report = |name: String, pred: Vec<f64>| {
        EvalReport::from_predictions(
            name,
            hash.clone(),
            None,
            split.seed,
            SplitLabel::Test,
            &[SubjectPredictions {
                subject_id: subject.to_string(),
                pred,
                target: rts(&te),
            }],
        )
    };
    match kind {
        BaselineKind::Wiener | BaselineKind::Ridge | BaselineKind::Lasso => {
            let flat = |ids: &[usize]| flatten_trials(cohort, s, ids);
            let p = LinearPipeline::fit(kind, &flat(&tr), &rts(&tr), &flat(&va), &rts(&va), &ALPHAS)?;
            let alpha = match p.regressor {
                Regressor::Wiener => None,
                Regressor::Ridge(a) | Regressor::Lasso(a) => Some(a),
            };
            let name = match alpha {
                Some(a) => format!("{kind} alpha={a}"),
                None => kind.to_string(),
            };
            Ok(BaselineOutcome {
                report: report(name, p.predict(&flat(&te)))?,
                alpha,
                n_components: Some(p.pca.n_components()),
                history: None,
            })
        }
        BaselineKind::Mlp => {
            let inputs = |ids: &[usize]| mlp_inputs(cohort, s, ids, model_cfg.e_max);
            let mut widths = vec![mlp_input_len(model_cfg.e_max)?];
            widths.extend(MLP_HIDDEN);
            widths.push(1);
            let mut mlp = Mlp::new(widths, train_cfg.seed)?;
            let history = mlp.train(&inputs(&tr)?, &rts(&tr), &inputs(&va)?, &rts(&va), train_cfg)?;
            let mut r = report(kind.to_string(), mlp.predict(&inputs(&te)?))?;
            r.params_hash = Some(super::report::sha256_hex(
                &mlp.params
                    .values
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect::<Vec<u8>>(),
            ));
            Ok(BaselineOutcome {
                report: r,
                alpha: None,
                n_components: None,
                history: Some(history),
            })
        }
        BaselineKind::CnnMlp => {
            let one = cohort.select(&[subject])?;
            let one_split = split.subset(&[s])?;
            let (model, history) = train(
                &cnn_mlp_config(model_cfg),
                &one,
                &one_split,
                train_cfg,
                Mode::SingleSubject,
            )?;
            let mut r = evaluate(&model, &one, &one_split, SplitLabel::Test)?;
            r.model = kind.to_string();
            r.config_hash = hash;
            Ok(BaselineOutcome {
                report: r,
                alpha: None,
                n_components: None,
                history: Some(history),
            })
        }
    }
}
