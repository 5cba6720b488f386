use crate::model::{ParamStore, Role};
use crate::real::Real;

/// AdamW with decoupled weight decay scaled by the learning rate.
/// Moments and step counts are kept per tensor, so tensors frozen for a
/// while resume with their own bias correction.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    steps: Vec<u32>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: Vec::new(),
            v: Vec::new(),
            steps: Vec::new(),
        }
    }

    /// Update every non-buffer tensor `i` with `trainable(i)`. Other tensors are
    /// left bit-identical.
    pub fn step<R: Real>(
        &mut self,
        params: &mut ParamStore<R>,
        grads: &[R],
        lr: f64,
        trainable: impl Fn(usize) -> bool,
    ) {
        let n = params.len();
        if self.m.len() < n {
            self.m.resize(n, 0.0);
            self.v.resize(n, 0.0);
        }
        if self.steps.len() < params.tensors.len() {
            self.steps.resize(params.tensors.len(), 0);
        }
        let (b1, b2) = (self.beta1, self.beta2);
        for (ti, t) in params.tensors.iter().enumerate() {
            if t.role == Role::Buffer || !trainable(ti) {
                continue;
            }
            self.steps[ti] += 1;
            let s = self.steps[ti] as i32;
            let c1 = 1.0 / (1.0 - b1.powi(s));
            let c2 = 1.0 / (1.0 - b2.powi(s));
            let range = t.offset..t.offset + t.len;
            let (m, v) = (&mut self.m[range.clone()], &mut self.v[range.clone()]);
            for ((p, g), (mi, vi)) in params.values[range.clone()]
                .iter_mut()
                .zip(&grads[range])
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = g.f64();
                let mn = b1 * *mi as f64 + (1.0 - b1) * g;
                let vn = b2 * *vi as f64 + (1.0 - b2) * g * g;
                *mi = mn as f32;
                *vi = vn as f32;
                let upd = (mn * c1) / ((vn * c2).sqrt() + self.eps) + self.weight_decay * p.f64();
                *p = R::c(p.f64() - lr * upd);
            }
        }
    }
}
