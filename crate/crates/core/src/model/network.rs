//! Forward and backward passes of the full network.
//!
//! Tokenizer: per electrode, a `k`-channel 1-D convolution (shared kernels,
//! "same" padding), batch normalization per channel over every unmasked
//! electrode-sample of the batch, and average pooling to `n_tokens` tokens.
//! Convolution, normalization and pooling are all affine, so the pooled
//! tokens are computed directly from box averages of the input; the full
//! convolution is only evaluated for batch statistics.
//!
//! Masked electrodes never enter the computation: attention over electrodes
//! runs on the compacted set of present electrodes, which is identical to
//! masking their logits with −∞, and their trunk columns receive zero input.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::encoding::pe_features;
use super::layers::{block_backward, block_forward, BlockCache};
use super::params::{append_head, init_params, HeadOffsets, Layout, ParamStore, Role};
use crate::error::{Error, Result};
use crate::real::Real;

/// Trials per parallel work unit; reductions run in chunk order, so results
/// do not depend on the thread count.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct ElectrodeInput<'a> {
    /// Position in the padded electrode axis (selects trunk columns).
    pub slot: usize,
    pub signal: &'a [f32],
    pub mni: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct TrialInput<'a> {
    pub head: usize,
    pub electrodes: Vec<ElectrodeInput<'a>>,
}

/// Response-time standardization; the network regresses standardized targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub sd: f64,
}

impl Default for TargetScaler {
    fn default() -> Self {
        Self { mean: 0.0, sd: 1.0 }
    }
}

impl TargetScaler {
    pub fn fit(targets: &[f64]) -> Result<Self> {
        if targets.len() < 2 {
            return Err(Error::ZeroVariance("need at least 2 targets".into()));
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let sd = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(sd > 0.0) {
            return Err(Error::ZeroVariance("training targets are constant".into()));
        }
        Ok(Self { mean, sd })
    }

    pub fn to_std(&self, ms: f64) -> f64 {
        (ms - self.mean) / self.sd
    }

    pub fn to_ms(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Batch-norm statistics, per channel.
#[derive(Debug, Clone)]
struct BnStats<R> {
    mean: Vec<R>,
    rstd: Vec<R>,
}

/// Stage-1 sums over every unmasked electrode of a batch.
#[derive(Debug, Clone)]
struct ConvSums {
    n: f64,
    sum_c: Vec<f64>,
    sum_c2: Vec<f64>,
    /// `Σ_t x[t + j − h]` per kernel tap.
    s: Vec<f64>,
    /// `Σ_t c_k[t] · x[t + j − h]`, `[k × kernel]`.
    cx: Vec<f64>,
}

impl ConvSums {
    fn new(k: usize, kern: usize) -> Self {
        Self {
            n: 0.0,
            sum_c: vec![0.0; k],
            sum_c2: vec![0.0; k],
            s: vec![0.0; kern],
            cx: vec![0.0; k * kern],
        }
    }

    fn add(&mut self, o: &ConvSums) {
        self.n += o.n;
        for (a, b) in self
            .sum_c
            .iter_mut()
            .chain(self.sum_c2.iter_mut())
            .chain(self.s.iter_mut())
            .chain(self.cx.iter_mut())
            .zip(o.sum_c.iter().chain(&o.sum_c2).chain(&o.s).chain(&o.cx))
        {
            *a += b;
        }
    }
}

/// Gradient sums w.r.t. the pooled normalized tokens.
#[derive(Debug, Clone)]
struct TokenGrad {
    /// `Σ dz`.
    d: Vec<f64>,
    /// `Σ dz · x̂`.
    e: Vec<f64>,
    /// `Σ_τ dz[τ,k] · A[τ,j]`.
    t1: Vec<f64>,
}

impl TokenGrad {
    fn new(k: usize, kern: usize) -> Self {
        Self {
            d: vec![0.0; k],
            e: vec![0.0; k],
            t1: vec![0.0; k * kern],
        }
    }

    fn add(&mut self, o: &TokenGrad) {
        for (a, b) in self
            .d
            .iter_mut()
            .chain(self.e.iter_mut())
            .chain(self.t1.iter_mut())
            .zip(o.d.iter().chain(&o.e).chain(&o.t1))
        {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Default)]
struct TrialCache<R> {
    /// Per electrode: box averages `[T × kernel]`.
    a: Vec<Vec<R>>,
    /// Per electrode: normalized pooled conv output `[T × k]`.
    xhat: Vec<Vec<R>>,
    time: Vec<Vec<BlockCache<R>>>,
    space: Vec<Vec<BlockCache<R>>>,
    joint: Vec<BlockCache<R>>,
    pe: Vec<Vec<f64>>,
    /// Per electrode: trunk input `[T × k]`.
    latents: Vec<Vec<R>>,
}

/// Output of [`Model::gradients`].
#[derive(Debug, Clone)]
pub struct GradResult<R> {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Same layout as the parameter store; buffers get zero.
    pub grads: Vec<R>,
    pub predictions: Vec<R>,
    /// Batch mean and unbiased variance per channel (train-mode batch norm).
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Trainable parameter counts (batch-norm running statistics excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub shared: usize,
    pub per_head: usize,
    pub n_heads: usize,
    pub subject_specific: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<R: Real = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<R>,
    pub layout: Layout,
    /// Subject ids; subject `i` uses head `i` (head 0 for all when heads are ablated).
    pub subjects: Vec<String>,
    pub scaler: TargetScaler,
    pub seed: u64,
}

impl<R: Real> Model<R> {
    pub fn new(config: ModelConfig, subjects: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = subjects.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::SubjectExists(dup.clone()));
        }
        let n_heads = if config.ablate.rh { 1 } else { subjects.len() };
        let (params, layout) = init_params(&config, n_heads, seed);
        Ok(Self {
            config,
            params,
            layout,
            subjects,
            scaler: TargetScaler::default(),
            seed,
        })
    }

    pub fn count_parameters(&self) -> ParamCounts {
        let shared = self.params.count(|r| r == Role::Shared);
        let subject_specific = self.params.count(|r| matches!(r, Role::Head(_)));
        ParamCounts {
            shared,
            per_head: HeadOffsets::size(self.config.d, self.config.head_hidden),
            n_heads: self.n_heads(),
            subject_specific,
            total: shared + subject_specific,
        }
    }

    pub fn n_heads(&self) -> usize {
        self.layout.heads.len()
    }

    pub fn head_index(&self, subject: &str) -> Result<usize> {
        let i = self
            .subjects
            .iter()
            .position(|s| s == subject)
            .ok_or_else(|| Error::UnknownSubject(subject.to_string()))?;
        Ok(if self.config.ablate.rh { 0 } else { i })
    }

    /// Register a new subject with a freshly initialized head.
    pub fn add_subject(&mut self, subject: &str, seed: u64) -> Result<usize> {
        if self.subjects.iter().any(|s| s == subject) {
            return Err(Error::SubjectExists(subject.to_string()));
        }
        self.subjects.push(subject.to_string());
        if self.config.ablate.rh {
            return Ok(0);
        }
        let (idx, layout) = append_head(&mut self.params, &self.config, seed);
        self.layout = layout;
        Ok(idx)
    }

    pub fn cast<S: Real>(&self) -> Model<S> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            subjects: self.subjects.clone(),
            scaler: self.scaler,
            seed: self.seed,
        }
    }

    fn check_trial(&self, t: &TrialInput) -> Result<()> {
        if t.electrodes.is_empty() {
            return Err(Error::invalid("trial has no unmasked electrodes"));
        }
        if t.head >= self.n_heads() {
            return Err(Error::invalid(format!("head {} out of range", t.head)));
        }
        let mut used = vec![false; self.config.e_max];
        for e in &t.electrodes {
            if e.slot >= self.config.e_max || std::mem::replace(&mut used[e.slot], true) {
                return Err(Error::invalid(format!(
                    "electrode slot {} is out of range or repeated (e_max {})",
                    e.slot, self.config.e_max
                )));
            }
            if e.signal.len() != self.config.t_trial {
                return Err(Error::ShapeMismatch {
                    context: "trial input".into(),
                    detail: format!("{} samples, model expects {}", e.signal.len(), self.config.t_trial),
                });
            }
        }
        Ok(())
    }

    fn running_stats(&self) -> BnStats<R> {
        let k = self.config.k;
        let eps = self.config.bn_eps;
        let p = &self.params.values;
        BnStats {
            mean: p[self.layout.bn_mean..self.layout.bn_mean + k].to_vec(),
            rstd: p[self.layout.bn_var..self.layout.bn_var + k]
                .iter()
                .map(|v| R::one() / (*v + R::c(eps)).sqrt())
                .collect(),
        }
    }

    /// Box averages `A[τ][j] = mean(x[τ·s + j − h .. τ·s + j − h + w])`, zero padded.
    fn box_averages(&self, x: &[f32]) -> Vec<R> {
        let c = &self.config;
        let (kern, t) = (c.conv_kernel, c.n_tokens());
        let h = (kern / 2) as isize;
        let mut prefix = vec![0f64; x.len() + 1];
        for (i, v) in x.iter().enumerate() {
            prefix[i + 1] = prefix[i] + *v as f64;
        }
        let n = x.len() as isize;
        let at = |i: isize| prefix[i.clamp(0, n) as usize];
        let inv = 1.0 / c.pool_window as f64;
        let mut a = Vec::with_capacity(t * kern);
        for tau in 0..t {
            let start = (tau * c.pool_stride) as isize;
            for j in 0..kern as isize {
                let lo = start + j - h;
                a.push(R::c((at(lo + c.pool_window as isize) - at(lo)) * inv));
            }
        }
        a
    }

    fn conv_sums(&self, x: &[f32]) -> ConvSums {
        let c = &self.config;
        let (k, kern) = (c.k, c.conv_kernel);
        let h = (kern / 2) as isize;
        let p = &self.params.values;
        let w: Vec<f64> = p[self.layout.conv_w..self.layout.conv_w + k * kern]
            .iter()
            .map(|v| v.f64())
            .collect();
        let b: Vec<f64> = p[self.layout.conv_b..self.layout.conv_b + k]
            .iter()
            .map(|v| v.f64())
            .collect();
        let n = x.len();
        let mut xp = vec![0f64; n + kern - 1];
        for (d, v) in xp[h as usize..].iter_mut().zip(x) {
            *d = *v as f64;
        }
        let mut out = ConvSums::new(k, kern);
        out.n = n as f64;
        for (j, s) in out.s.iter_mut().enumerate() {
            *s = xp[j..j + n].iter().sum();
        }
        let mut ct = vec![0f64; n];
        for ch in 0..k {
            ct.fill(b[ch]);
            for j in 0..kern {
                let wj = w[ch * kern + j];
                for (c, v) in ct.iter_mut().zip(&xp[j..j + n]) {
                    *c += wj * v;
                }
            }
            out.sum_c[ch] = ct.iter().sum();
            out.sum_c2[ch] = ct.iter().map(|c| c * c).sum();
            for j in 0..kern {
                out.cx[ch * kern + j] = ct.iter().zip(&xp[j..j + n]).map(|(c, v)| c * v).sum();
            }
        }
        out
    }

    fn pe_offsets(&self) -> Option<(usize, usize)> {
        self.layout.pe_w.zip(self.layout.pe_b)
    }

    /// Trunk features of one trial; fills `cache` when given.
    fn trunk_forward(&self, trial: &TrialInput, bn: &BnStats<R>, mut cache: Option<&mut TrialCache<R>>) -> Vec<R> {
        let c = &self.config;
        let (k, kern, t) = (c.k, c.conv_kernel, c.n_tokens());
        let p = &self.params.values;
        let l = &self.layout;
        let eps = R::c(c.ln_eps);
        let w = &p[l.conv_w..l.conv_w + k * kern];
        let b = &p[l.conv_b..l.conv_b + k];
        let gamma = &p[l.bn_w..l.bn_w + k];
        let beta = &p[l.bn_b..l.bn_b + k];
        let n_e = trial.electrodes.len();

        let mut z: Vec<Vec<R>> = Vec::with_capacity(n_e);
        for e in &trial.electrodes {
            let a = self.box_averages(e.signal);
            let mut xhat = vec![R::zero(); t * k];
            let mut ze = vec![R::zero(); t * k];
            for tau in 0..t {
                let at = &a[tau * kern..(tau + 1) * kern];
                for ch in 0..k {
                    let mut pc = b[ch];
                    for (wv, av) in w[ch * kern..(ch + 1) * kern].iter().zip(at) {
                        pc += *wv * *av;
                    }
                    let h = (pc - bn.mean[ch]) * bn.rstd[ch];
                    xhat[tau * k + ch] = h;
                    ze[tau * k + ch] = gamma[ch] * h + beta[ch];
                }
            }
            if let Some(cc) = cache.as_deref_mut() {
                cc.a.push(a);
                cc.xhat.push(xhat);
            }
            z.push(ze);
        }

        let pe: Vec<Vec<f64>> = if self.pe_offsets().is_some() {
            trial.electrodes.iter().map(|e| pe_features(c, e.slot, e.mni)).collect()
        } else {
            Vec::new()
        };

        for blocks in &l.blocks {
            if let Some(o) = blocks.joint {
                let seq: Vec<R> = z.concat();
                let mut bc = BlockCache::default();
                let y = block_forward(p, &o, &seq, eps, cache.is_some().then_some(&mut bc));
                for (ei, ze) in z.iter_mut().enumerate() {
                    ze.copy_from_slice(&y[ei * t * k..(ei + 1) * t * k]);
                }
                if let Some(cc) = cache.as_deref_mut() {
                    cc.joint.push(bc);
                }
                continue;
            }
            if let Some(o) = blocks.time {
                let mut caches = Vec::new();
                for ze in z.iter_mut() {
                    let mut bc = BlockCache::default();
                    *ze = block_forward(p, &o, ze, eps, cache.is_some().then_some(&mut bc));
                    caches.push(bc);
                }
                if let Some(cc) = cache.as_deref_mut() {
                    cc.time.push(caches);
                }
            }
            if let Some((pw, pb)) = self.pe_offsets() {
                let nf = c.pe_features();
                for (ze, feat) in z.iter_mut().zip(&pe) {
                    for ch in 0..k {
                        let mut enc = p[pb + ch];
                        for (wv, fv) in p[pw + ch * nf..pw + (ch + 1) * nf].iter().zip(feat) {
                            enc += *wv * R::c(*fv);
                        }
                        for tau in 0..t {
                            ze[tau * k + ch] += enc;
                        }
                    }
                }
            }
            if let Some(o) = blocks.space {
                let mut caches = Vec::new();
                let mut seq = vec![R::zero(); n_e * k];
                for tau in 0..t {
                    for (ei, ze) in z.iter().enumerate() {
                        seq[ei * k..(ei + 1) * k].copy_from_slice(&ze[tau * k..(tau + 1) * k]);
                    }
                    let mut bc = BlockCache::default();
                    let y = block_forward(p, &o, &seq, eps, cache.is_some().then_some(&mut bc));
                    for (ei, ze) in z.iter_mut().enumerate() {
                        ze[tau * k..(tau + 1) * k].copy_from_slice(&y[ei * k..(ei + 1) * k]);
                    }
                    caches.push(bc);
                }
                if let Some(cc) = cache.as_deref_mut() {
                    cc.space.push(caches);
                }
            }
        }

        let (d, cols, tk) = (c.d, c.trunk_in(), t * k);
        let mut f: Vec<R> = p[l.trunk_b..l.trunk_b + d].to_vec();
        for (e, ze) in trial.electrodes.iter().zip(&z) {
            let seg = e.slot * tk;
            for (i, fi) in f.iter_mut().enumerate() {
                let row = &p[l.trunk_w + i * cols + seg..l.trunk_w + i * cols + seg + tk];
                let mut acc = R::zero();
                for (wv, zv) in row.iter().zip(ze) {
                    acc += *wv * *zv;
                }
                *fi += acc;
            }
        }
        if let Some(cc) = cache {
            cc.pe = pe;
            cc.latents = z;
        }
        f
    }

    /// Subject head on trunk features; returns the standardized prediction and
    /// the hidden pre-activations.
    pub fn head_forward(&self, head: usize, f: &[R]) -> (R, Vec<R>) {
        let h = self.layout.heads[head];
        let p = &self.params.values;
        let mut hpre = vec![R::zero(); h.h];
        let mut y = p[h.fc2_b()];
        for (j, hp) in hpre.iter_mut().enumerate() {
            let row = &p[h.fc1_w() + j * h.d..h.fc1_w() + (j + 1) * h.d];
            let mut acc = p[h.fc1_b() + j];
            for (wv, fv) in row.iter().zip(f) {
                acc += *wv * *fv;
            }
            *hp = acc;
            y += p[h.fc2_w() + j] * acc.max(R::zero());
        }
        (y, hpre)
    }

    /// Backward through a head; accumulates into `grad`, returns `dF`.
    pub fn head_backward(&self, head: usize, f: &[R], hpre: &[R], dy: R, grad: &mut [R]) -> Vec<R> {
        let h = self.layout.heads[head];
        let p = &self.params.values;
        let mut df = vec![R::zero(); h.d];
        grad[h.fc2_b()] += dy;
        for (j, hp) in hpre.iter().enumerate() {
            grad[h.fc2_w() + j] += dy * hp.max(R::zero());
            if *hp <= R::zero() {
                continue;
            }
            let dh = dy * p[h.fc2_w() + j];
            grad[h.fc1_b() + j] += dh;
            let off = h.fc1_w() + j * h.d;
            for i in 0..h.d {
                grad[off + i] += dh * f[i];
                df[i] += dh * p[off + i];
            }
        }
        df
    }

    fn trial_backward(&self, trial: &TrialInput, cache: &TrialCache<R>, df: &[R], grad: &mut [R], tg: &mut TokenGrad) {
        let c = &self.config;
        let (k, kern, t) = (c.k, c.conv_kernel, c.n_tokens());
        let p = &self.params.values;
        let l = &self.layout;
        let (cols, tk) = (c.trunk_in(), t * k);

        for (gb, d) in grad[l.trunk_b..l.trunk_b + c.d].iter_mut().zip(df) {
            *gb += *d;
        }
        let mut dz: Vec<Vec<R>> = Vec::with_capacity(trial.electrodes.len());
        for (e, ze) in trial.electrodes.iter().zip(&cache.latents) {
            let seg = e.slot * tk;
            let mut dze = vec![R::zero(); tk];
            for (i, &dfi) in df.iter().enumerate() {
                if dfi == R::zero() {
                    continue;
                }
                let off = l.trunk_w + i * cols + seg;
                let (row, grow) = (&p[off..off + tk], &mut grad[off..off + tk]);
                for j in 0..tk {
                    grow[j] += dfi * ze[j];
                    dze[j] += dfi * row[j];
                }
            }
            dz.push(dze);
        }

        let n_e = dz.len();
        let (mut ti, mut si, mut ji) = (cache.time.len(), cache.space.len(), cache.joint.len());
        for blocks in l.blocks.iter().rev() {
            if let Some(o) = blocks.joint {
                ji -= 1;
                let dy = dz.concat();
                let dx = block_backward(p, &o, &cache.joint[ji], &dy, grad);
                for (ei, d) in dz.iter_mut().enumerate() {
                    d.copy_from_slice(&dx[ei * tk..(ei + 1) * tk]);
                }
                continue;
            }
            if let Some(o) = blocks.space {
                si -= 1;
                let mut seq = vec![R::zero(); n_e * k];
                for tau in 0..t {
                    for (ei, d) in dz.iter().enumerate() {
                        seq[ei * k..(ei + 1) * k].copy_from_slice(&d[tau * k..(tau + 1) * k]);
                    }
                    let dx = block_backward(p, &o, &cache.space[si][tau], &seq, grad);
                    for (ei, d) in dz.iter_mut().enumerate() {
                        d[tau * k..(tau + 1) * k].copy_from_slice(&dx[ei * k..(ei + 1) * k]);
                    }
                }
            }
            if let Some((pw, pb)) = self.pe_offsets() {
                let nf = c.pe_features();
                for (d, feat) in dz.iter().zip(&cache.pe) {
                    for ch in 0..k {
                        let mut denc = R::zero();
                        for tau in 0..t {
                            denc += d[tau * k + ch];
                        }
                        grad[pb + ch] += denc;
                        for (g, fv) in grad[pw + ch * nf..pw + (ch + 1) * nf].iter_mut().zip(feat) {
                            *g += denc * R::c(*fv);
                        }
                    }
                }
            }
            if let Some(o) = blocks.time {
                ti -= 1;
                for (ei, d) in dz.iter_mut().enumerate() {
                    *d = block_backward(p, &o, &cache.time[ti][ei], d, grad);
                }
            }
        }

        for ((d, xhat), a) in dz.iter().zip(&cache.xhat).zip(&cache.a) {
            for tau in 0..t {
                for ch in 0..k {
                    let g = d[tau * k + ch].f64();
                    tg.d[ch] += g;
                    tg.e[ch] += g * xhat[tau * k + ch].f64();
                    for j in 0..kern {
                        tg.t1[ch * kern + j] += g * a[tau * kern + j].f64();
                    }
                }
            }
        }
    }

    fn batch_conv_sums(&self, trials: &[TrialInput]) -> ConvSums {
        let (k, kern) = (self.config.k, self.config.conv_kernel);
        let parts: Vec<ConvSums> = trials
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut s = ConvSums::new(k, kern);
                for t in chunk {
                    for e in &t.electrodes {
                        s.add(&self.conv_sums(e.signal));
                    }
                }
                s
            })
            .collect();
        let mut total = ConvSums::new(k, kern);
        for p in &parts {
            total.add(p);
        }
        total
    }

    /// Mean per-sample loss and its parameter gradient over a batch.
    /// `loss(pred, target)` returns the sample loss and its derivative in
    /// `pred`. With `train_bn`, batch norm uses the batch statistics (and its
    /// gradient flows through them); otherwise the running statistics.
    pub fn gradients<F>(&self, trials: &[TrialInput], targets: &[R], loss: F, train_bn: bool) -> Result<GradResult<R>>
    where
        F: Fn(R, R) -> (R, R) + Sync,
    {
        if trials.is_empty() || trials.len() != targets.len() {
            return Err(Error::invalid(
                "gradient batch must be non-empty with one target per trial",
            ));
        }
        for t in trials {
            self.check_trial(t)?;
        }
        let c = &self.config;
        let (k, kern) = (c.k, c.conv_kernel);
        let l = &self.layout;
        let eps = c.bn_eps;

        let (bn, sums) = if train_bn {
            let s = self.batch_conv_sums(trials);
            let mean: Vec<f64> = s.sum_c.iter().map(|v| v / s.n).collect();
            let var: Vec<f64> = s
                .sum_c2
                .iter()
                .zip(&mean)
                .map(|(q, m)| (q / s.n - m * m).max(0.0))
                .collect();
            let bn = BnStats {
                mean: mean.iter().map(|v| R::c(*v)).collect(),
                rstd: var.iter().map(|v| R::c(1.0 / (v + eps).sqrt())).collect(),
            };
            (bn, Some((s, mean, var)))
        } else {
            (self.running_stats(), None)
        };

        let inv_b = R::c(1.0 / trials.len() as f64);
        let n_params = self.params.len();
        let parts: Vec<(Vec<R>, TokenGrad, f64, Vec<R>)> = trials
            .par_chunks(CHUNK)
            .zip(targets.par_chunks(CHUNK))
            .map(|(chunk, tgt)| {
                let mut grad = vec![R::zero(); n_params];
                let mut tg = TokenGrad::new(k, kern);
                let mut loss_sum = 0.0;
                let mut preds = Vec::with_capacity(chunk.len());
                for (trial, &target) in chunk.iter().zip(tgt) {
                    let mut cache = TrialCache::default();
                    let f = self.trunk_forward(trial, &bn, Some(&mut cache));
                    let (y, hpre) = self.head_forward(trial.head, &f);
                    let (lv, dl) = loss(y, target);
                    loss_sum += lv.f64();
                    preds.push(y);
                    let df = self.head_backward(trial.head, &f, &hpre, dl * inv_b, &mut grad);
                    self.trial_backward(trial, &cache, &df, &mut grad, &mut tg);
                }
                (grad, tg, loss_sum, preds)
            })
            .collect();

        let mut grads = vec![R::zero(); n_params];
        let mut tg = TokenGrad::new(k, kern);
        let mut loss_sum = 0.0;
        let mut predictions = Vec::with_capacity(trials.len());
        for (g, t, ls, pr) in parts {
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += *b;
            }
            tg.add(&t);
            loss_sum += ls;
            predictions.extend(pr);
        }

        let p = &self.params.values;
        let gamma: Vec<f64> = p[l.bn_w..l.bn_w + k].iter().map(|v| v.f64()).collect();
        let mut batch_stats = None;
        for ch in 0..k {
            grads[l.bn_b + ch] = R::c(tg.d[ch]);
            grads[l.bn_w + ch] = R::c(tg.e[ch]);
            let rstd = bn.rstd[ch].f64();
            let scale = gamma[ch] * rstd;
            match &sums {
                Some((s, mean, _)) => {
                    let dmu = -scale * tg.d[ch];
                    let dvar = -gamma[ch] * tg.e[ch] * rstd * rstd / 2.0;
                    for j in 0..kern {
                        let dw = scale * tg.t1[ch * kern + j]
                            + dmu / s.n * s.s[j]
                            + 2.0 * dvar / s.n * (s.cx[ch * kern + j] - mean[ch] * s.s[j]);
                        grads[l.conv_w + ch * kern + j] = R::c(dw);
                    }
                    let db = scale * tg.d[ch] + dmu + 2.0 * dvar / s.n * (s.sum_c[ch] - s.n * mean[ch]);
                    grads[l.conv_b + ch] = R::c(db);
                }
                None => {
                    for j in 0..kern {
                        grads[l.conv_w + ch * kern + j] = R::c(scale * tg.t1[ch * kern + j]);
                    }
                    grads[l.conv_b + ch] = R::c(scale * tg.d[ch]);
                }
            }
        }
        if let Some((s, mean, var)) = sums {
            let unbiased = if s.n > 1.0 { s.n / (s.n - 1.0) } else { 1.0 };
            batch_stats = Some((mean, var.iter().map(|v| v * unbiased).collect()));
        }
        for t in &self.params.tensors {
            if t.role == Role::Buffer {
                grads[t.offset..t.offset + t.len].fill(R::zero());
            }
        }
        Ok(GradResult {
            loss: loss_sum / trials.len() as f64,
            grads,
            predictions,
            batch_stats,
        })
    }

    /// Exponential moving update of the batch-norm running statistics.
    pub fn update_running_stats(&mut self, mean: &[f64], var_unbiased: &[f64]) {
        let m = self.config.bn_momentum;
        let (om, ov) = (self.layout.bn_mean, self.layout.bn_var);
        for ch in 0..self.config.k {
            let rm = &mut self.params.values[om + ch];
            *rm = R::c((1.0 - m) * rm.f64() + m * mean[ch]);
            let rv = &mut self.params.values[ov + ch];
            *rv = R::c((1.0 - m) * rv.f64() + m * var_unbiased[ch]);
        }
    }

    /// Trunk features in eval mode.
    pub fn features(&self, trials: &[TrialInput]) -> Result<Vec<Vec<R>>> {
        for t in trials {
            self.check_trial(t)?;
        }
        let bn = self.running_stats();
        Ok(trials.par_iter().map(|t| self.trunk_forward(t, &bn, None)).collect())
    }

    /// Standardized predictions in eval mode.
    pub fn predict_std(&self, trials: &[TrialInput]) -> Result<Vec<R>> {
        for t in trials {
            self.check_trial(t)?;
        }
        let bn = self.running_stats();
        Ok(trials
            .par_iter()
            .map(|t| self.head_forward(t.head, &self.trunk_forward(t, &bn, None)).0)
            .collect())
    }

    /// Predicted response times (ms) in eval mode.
    pub fn predict(&self, trials: &[TrialInput]) -> Result<Vec<f64>> {
        Ok(self
            .predict_std(trials)?
            .into_iter()
            .map(|y| self.scaler.to_ms(y.f64()))
            .collect())
    }

    /// Attention weights of block `block`'s space attention at token `tau`,
    /// scattered to a padded `[e_max × e_max]` matrix (zero at absent slots).
    pub fn space_attention_map(&self, trial: &TrialInput, block: usize, tau: usize) -> Result<Vec<f64>> {
        self.check_trial(trial)?;
        if self.layout.blocks.get(block).and_then(|b| b.space).is_none() {
            return Err(Error::invalid("model has no space attention at that block"));
        }
        let mut cache = TrialCache::default();
        self.trunk_forward(trial, &self.running_stats(), Some(&mut cache));
        let idx = self.layout.blocks[..block].iter().filter(|b| b.space.is_some()).count();
        let bc = &cache.space[idx][tau];
        let (e_max, n) = (self.config.e_max, trial.electrodes.len());
        let mut out = vec![0.0; e_max * e_max];
        for (i, ei) in trial.electrodes.iter().enumerate() {
            for (j, ej) in trial.electrodes.iter().enumerate() {
                out[ei.slot * e_max + ej.slot] = bc.attn[i * n + j].f64();
            }
        }
        Ok(out)
    }

    /// Head parameter range of `head` in the flat store.
    pub fn head_range(&self, head: usize) -> std::ops::Range<usize> {
        self.layout.heads[head].range()
    }

    /// Raw tokenizer output in eval mode (before any attention), per electrode `[T × k]`.
    pub fn tokens(&self, trial: &TrialInput) -> Result<Vec<Vec<R>>> {
        self.check_trial(trial)?;
        let c = &self.config;
        let (k, kern, t) = (c.k, c.conv_kernel, c.n_tokens());
        let p = &self.params.values;
        let l = &self.layout;
        let bn = self.running_stats();
        Ok(trial
            .electrodes
            .iter()
            .map(|e| {
                let a = self.box_averages(e.signal);
                let mut z = vec![R::zero(); t * k];
                for tau in 0..t {
                    for ch in 0..k {
                        let mut pc = p[l.conv_b + ch];
                        for j in 0..kern {
                            pc += p[l.conv_w + ch * kern + j] * a[tau * kern + j];
                        }
                        z[tau * k + ch] = p[l.bn_w + ch] * (pc - bn.mean[ch]) * bn.rstd[ch] + p[l.bn_b + ch];
                    }
                }
                z
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::PeScheme;
    use crate::rng;
    use rand::Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            t_trial: 60,
            pool_window: 20,
            pool_stride: 5,
            conv_kernel: 5,
            e_max: 4,
            d: 6,
            head_hidden: 5,
            ..ModelConfig::default()
        }
    }

    struct Data {
        signals: Vec<Vec<Vec<f32>>>,
        slots: Vec<Vec<usize>>,
        heads: Vec<usize>,
        targets: Vec<f64>,
    }

    fn data(seed: u64, t_trial: usize) -> Data {
        let mut r = rng::stream(seed, "test-data", 0);
        let slots = vec![vec![0, 2], vec![1, 2, 3], vec![3]];
        let signals = slots
            .iter()
            .map(|s| {
                s.iter()
                    .map(|_| (0..t_trial).map(|_| r.random_range(-2.0f32..2.0)).collect())
                    .collect()
            })
            .collect();
        Data {
            signals,
            slots,
            heads: vec![0, 1, 0],
            targets: vec![0.4, -1.1, 0.9],
        }
    }

    fn inputs(d: &Data) -> Vec<TrialInput<'_>> {
        d.signals
            .iter()
            .zip(&d.slots)
            .zip(&d.heads)
            .map(|((sig, slots), &head)| TrialInput {
                head,
                electrodes: sig
                    .iter()
                    .zip(slots)
                    .map(|(x, &slot)| ElectrodeInput {
                        slot,
                        signal: x,
                        mni: [slot as f64 * 11.0 - 20.0, 5.0 * slot as f64, -30.0 + slot as f64],
                    })
                    .collect(),
            })
            .collect()
    }

    fn perturbed(config: ModelConfig, seed: u64) -> Model<f64> {
        let mut m = Model::<f64>::new(config, vec!["a".into(), "b".into()], seed).unwrap();
        let mut r = rng::stream(seed, "perturb", 0);
        for t in m.params.tensors.clone() {
            if t.role == Role::Buffer {
                continue;
            }
            for v in &mut m.params.values[t.offset..t.offset + t.len] {
                *v += r.random_range(-0.2..0.2);
            }
        }
        let (om, ov) = (m.layout.bn_mean, m.layout.bn_var);
        m.params.values[om] = 0.1;
        m.params.values[ov + 1] = 1.7;
        m
    }

    fn mse(y: f64, t: f64) -> (f64, f64) {
        ((y - t).powi(2), 2.0 * (y - t))
    }

    fn check_gradients(config: ModelConfig, train_bn: bool) {
        let m = perturbed(config, 5);
        let d = data(7, m.config.t_trial);
        let x = inputs(&d);
        let g = m.gradients(&x, &d.targets, mse, train_bn).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for t in &m.params.tensors {
            for i in t.offset..t.offset + t.len {
                let mut mm = m.clone();
                mm.params.values[i] += h;
                let up = mm.gradients(&x, &d.targets, mse, train_bn).unwrap().loss;
                mm.params.values[i] -= 2.0 * h;
                let dn = mm.gradients(&x, &d.targets, mse, train_bn).unwrap().loss;
                let fd = if t.role == Role::Buffer {
                    0.0
                } else {
                    (up - dn) / (2.0 * h)
                };
                let err = (fd - g.grads[i]).abs() / (1.0 + fd.abs());
                worst = worst.max(err);
                assert!(
                    err < 1e-5,
                    "{} [{}]: fd {fd} vs analytic {}",
                    t.name,
                    i - t.offset,
                    g.grads[i]
                );
            }
        }
        assert!(worst < 1e-5);
    }

    #[test]
    fn gradients_match_finite_differences_train_bn() {
        check_gradients(small_config(), true);
    }

    #[test]
    fn gradients_match_finite_differences_eval_bn() {
        check_gradients(small_config(), false);
    }

    #[test]
    fn gradients_match_finite_differences_variants() {
        check_gradients(
            ModelConfig {
                pe: PeScheme::SinusoidalIndex,
                n_blocks: 2,
                ..small_config()
            },
            true,
        );
        check_gradients(
            ModelConfig {
                variant_2d: true,
                ..small_config()
            },
            true,
        );
    }

    #[test]
    fn conv_bias_gradient_vanishes_under_batch_norm() {
        let m = perturbed(small_config(), 9);
        let d = data(3, m.config.t_trial);
        let g = m.gradients(&inputs(&d), &d.targets, mse, true).unwrap();
        for ch in 0..m.config.k {
            assert!(g.grads[m.layout.conv_b + ch].abs() < 1e-10);
        }
    }

    #[test]
    fn batch_stats_match_direct_convolution() {
        let m = perturbed(small_config(), 2);
        let d = data(4, m.config.t_trial);
        let g = m.gradients(&inputs(&d), &d.targets, mse, true).unwrap();
        let (mean, var) = g.batch_stats.unwrap();
        let kern = m.config.conv_kernel;
        let p = &m.params.values;
        for ch in 0..m.config.k {
            let mut vals = Vec::new();
            for x in d.signals.iter().flatten() {
                for t in 0..x.len() as isize {
                    let mut c = p[m.layout.conv_b + ch];
                    for j in 0..kern as isize {
                        let i = t + j - (kern / 2) as isize;
                        if i >= 0 && (i as usize) < x.len() {
                            c += p[m.layout.conv_w + ch * kern + j as usize] * x[i as usize] as f64;
                        }
                    }
                    vals.push(c);
                }
            }
            let n = vals.len() as f64;
            let mu = vals.iter().sum::<f64>() / n;
            let v = vals.iter().map(|c| (c - mu).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((mu - mean[ch]).abs() < 1e-10);
            assert!((v - var[ch]).abs() < 1e-9 * v.max(1.0));
        }
    }

    #[test]
    fn tokens_match_direct_conv_then_pool() {
        let m = perturbed(small_config(), 11);
        let d = data(12, m.config.t_trial);
        let x = inputs(&d);
        let tok = m.tokens(&x[1]).unwrap();
        let c = &m.config;
        let p = &m.params.values;
        let l = &m.layout;
        for (e, sig) in d.signals[1].iter().enumerate() {
            for ch in 0..c.k {
                let conv: Vec<f64> = (0..c.t_trial as isize)
                    .map(|t| {
                        let mut v = p[l.conv_b + ch];
                        for j in 0..c.conv_kernel as isize {
                            let i = t + j - (c.conv_kernel / 2) as isize;
                            if i >= 0 && (i as usize) < sig.len() {
                                v += p[l.conv_w + ch * c.conv_kernel + j as usize] * sig[i as usize] as f64;
                            }
                        }
                        let s = (p[l.bn_var + ch] + c.bn_eps).sqrt();
                        p[l.bn_w + ch] * (v - p[l.bn_mean + ch]) / s + p[l.bn_b + ch]
                    })
                    .collect();
                for tau in 0..c.n_tokens() {
                    let w = &conv[tau * c.pool_stride..tau * c.pool_stride + c.pool_window];
                    let pooled = w.iter().sum::<f64>() / w.len() as f64;
                    assert!((pooled - tok[e][tau * c.k + ch]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn attention_map_is_zero_at_absent_slots() {
        let m = perturbed(small_config(), 1);
        let d = data(2, m.config.t_trial);
        let x = inputs(&d);
        let e_max = m.config.e_max;
        let map = m.space_attention_map(&x[0], 0, 3).unwrap();
        let present = [true, false, true, false];
        for i in 0..e_max {
            let row = &map[i * e_max..(i + 1) * e_max];
            if present[i] {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for j in 0..e_max {
                if !present[i] || !present[j] {
                    assert_eq!(row[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn heads_only_receive_gradient_from_their_subject() {
        let m = perturbed(small_config(), 3);
        let d = data(8, m.config.t_trial);
        let x = inputs(&d);
        let only_a: Vec<TrialInput> = x.iter().filter(|t| t.head == 0).cloned().collect();
        let g = m.gradients(&only_a, &[0.4, 0.9], mse, true).unwrap();
        assert!(g.grads[m.head_range(1)].iter().all(|v| *v == 0.0));
        assert!(g.grads[m.head_range(0)].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn empty_trial_is_rejected() {
        let m = Model::<f32>::new(small_config(), vec!["a".into()], 0).unwrap();
        let t = TrialInput {
            head: 0,
            electrodes: vec![],
        };
        assert!(m.predict_std(&[t]).is_err());
    }

    #[test]
    fn duplicate_subjects_rejected_and_heads_appended() {
        assert!(Model::<f32>::new(small_config(), vec!["a".into(), "a".into()], 0).is_err());
        let mut m = Model::<f32>::new(small_config(), vec!["a".into()], 0).unwrap();
        let before = m.params.values.clone();
        assert_eq!(m.add_subject("b", 4).unwrap(), 1);
        assert!(m.add_subject("b", 4).is_err());
        assert_eq!(&m.params.values[..before.len()], &before[..]);
        assert_eq!(m.head_index("b").unwrap(), 1);
    }

    #[test]
    fn default_parameter_counts() {
        let ids: Vec<String> = (0..21).map(|i| format!("S{i:02}")).collect();
        let m = Model::<f32>::new(ModelConfig::default(), ids, 0).unwrap();
        let c = m.count_parameters();
        assert_eq!((c.per_head, c.subject_specific), (2081, 43_701));
        assert!(c.shared >= 752_768);
        let by_tensor: usize = m
            .params
            .tensors
            .iter()
            .filter(|t| t.role != Role::Buffer)
            .map(|t| t.len)
            .sum();
        assert_eq!(c.total, by_tensor);
        let rh = Model::<f32>::new(
            ModelConfig {
                ablate: crate::model::Ablations {
                    rh: true,
                    ..Default::default()
                },
                ..ModelConfig::default()
            },
            vec!["a".into(), "b".into(), "c".into()],
            0,
        )
        .unwrap();
        assert_eq!(rh.count_parameters().subject_specific, 2081);
    }

    #[test]
    fn scaler_round_trip() {
        let s = TargetScaler::fit(&[300.0, 400.0, 500.0]).unwrap();
        assert!((s.to_ms(s.to_std(432.0)) - 432.0).abs() < 1e-9);
        assert!(TargetScaler::fit(&[5.0, 5.0]).is_err());
    }
}
