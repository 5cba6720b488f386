//! Pre-norm single-head transformer block over a `[L × K]` sequence, with
//! hand-written backward pass.

use super::params::BlockOffsets;
use crate::real::Real;

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct BlockCache<R> {
    pub l: usize,
    pub xhat1: Vec<R>,
    pub rstd1: Vec<R>,
    pub u1: Vec<R>,
    pub q: Vec<R>,
    pub kk: Vec<R>,
    pub v: Vec<R>,
    /// Row-stochastic `[L × L]` attention weights.
    pub attn: Vec<R>,
    pub o: Vec<R>,
    pub xhat2: Vec<R>,
    pub rstd2: Vec<R>,
    pub u2: Vec<R>,
    pub hpre: Vec<R>,
}

fn layer_norm<R: Real>(x: &[R], k: usize, w: &[R], b: &[R], eps: R) -> (Vec<R>, Vec<R>, Vec<R>) {
    let l = x.len() / k;
    let kr = R::c(k as f64);
    let mut y = vec![R::zero(); x.len()];
    let mut xhat = vec![R::zero(); x.len()];
    let mut rstd = vec![R::zero(); l];
    for i in 0..l {
        let row = &x[i * k..(i + 1) * k];
        let mean = row.iter().copied().sum::<R>() / kr;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<R>() / kr;
        let r = R::one() / (var + eps).sqrt();
        rstd[i] = r;
        for c in 0..k {
            let h = (row[c] - mean) * r;
            xhat[i * k + c] = h;
            y[i * k + c] = w[c] * h + b[c];
        }
    }
    (y, xhat, rstd)
}

fn layer_norm_back<R: Real>(dy: &[R], xhat: &[R], rstd: &[R], w: &[R], k: usize, dw: &mut [R], db: &mut [R]) -> Vec<R> {
    let l = rstd.len();
    let kr = R::c(k as f64);
    let mut dx = vec![R::zero(); dy.len()];
    for i in 0..l {
        let mut m1 = R::zero();
        let mut m2 = R::zero();
        for c in 0..k {
            let g = dy[i * k + c];
            dw[c] += g * xhat[i * k + c];
            db[c] += g;
            let dh = g * w[c];
            m1 += dh;
            m2 += dh * xhat[i * k + c];
        }
        m1 /= kr;
        m2 /= kr;
        for c in 0..k {
            let dh = dy[i * k + c] * w[c];
            dx[i * k + c] = rstd[i] * (dh - m1 - xhat[i * k + c] * m2);
        }
    }
    dx
}

/// `y = x Wᵀ + b` for `x: [L × n_in]`, `W: [n_out × n_in]`.
pub fn linear<R: Real>(x: &[R], w: &[R], b: &[R], n_in: usize, n_out: usize) -> Vec<R> {
    let l = x.len() / n_in;
    let mut y = vec![R::zero(); l * n_out];
    for i in 0..l {
        let xi = &x[i * n_in..(i + 1) * n_in];
        for o in 0..n_out {
            let wo = &w[o * n_in..(o + 1) * n_in];
            let mut acc = b[o];
            for (a, c) in xi.iter().zip(wo) {
                acc += *a * *c;
            }
            y[i * n_out + o] = acc;
        }
    }
    y
}

/// Accumulates weight/bias gradients and returns `dx`.
pub fn linear_back<R: Real>(
    dy: &[R],
    x: &[R],
    w: &[R],
    n_in: usize,
    n_out: usize,
    dw: &mut [R],
    db: &mut [R],
) -> Vec<R> {
    let l = x.len() / n_in;
    let mut dx = vec![R::zero(); x.len()];
    for i in 0..l {
        let xi = &x[i * n_in..(i + 1) * n_in];
        let dxi = &mut dx[i * n_in..(i + 1) * n_in];
        for o in 0..n_out {
            let g = dy[i * n_out + o];
            if g == R::zero() {
                continue;
            }
            db[o] += g;
            let wo = &w[o * n_in..(o + 1) * n_in];
            let dwo = &mut dw[o * n_in..(o + 1) * n_in];
            for c in 0..n_in {
                dwo[c] += g * xi[c];
                dxi[c] += g * wo[c];
            }
        }
    }
    dx
}

/// Dot product with eight independent accumulators (fixed order, vectorizable).
#[inline]
pub(crate) fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut acc = [R::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `[L × d]` to `[d × L]`.
fn transpose<R: Real>(x: &[R], d: usize) -> Vec<R> {
    let l = x.len() / d;
    let mut t = vec![R::zero(); x.len()];
    for i in 0..l {
        for c in 0..d {
            t[c * l + i] = x[i * d + c];
        }
    }
    t
}

/// Softmax attention weights for `q, k: [L × d]`, scaled by `1/√d`.
pub fn attention_weights<R: Real>(q: &[R], k: &[R], d: usize) -> Vec<R> {
    let l = q.len() / d;
    let scale = R::one() / R::c(d as f64).sqrt();
    let kt = transpose(k, d);
    let mut a = vec![R::zero(); l * l];
    for i in 0..l {
        let row = &mut a[i * l..(i + 1) * l];
        for c in 0..d {
            let qc = q[i * d + c] * scale;
            for (r, kv) in row.iter_mut().zip(&kt[c * l..(c + 1) * l]) {
                *r += qc * *kv;
            }
        }
        let max = row.iter().fold(R::neg_infinity(), |m, v| m.max(*v));
        let mut sum = R::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp_nonpos();
            sum += *v;
        }
        let inv = R::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    a
}

/// `attn · v` for `attn: [L × L]`, `v: [L × d]`.
fn attend<R: Real>(attn: &[R], v: &[R], d: usize) -> Vec<R> {
    let l = v.len() / d;
    let vt = transpose(v, d);
    let mut out = vec![R::zero(); l * d];
    for i in 0..l {
        let row = &attn[i * l..(i + 1) * l];
        for c in 0..d {
            out[i * d + c] = dot(row, &vt[c * l..(c + 1) * l]);
        }
    }
    out
}

/// One pre-norm block: `x + Attn(LN₁ x)`, then `+ FFN(LN₂ ·)`.
pub fn block_forward<R: Real>(p: &[R], o: &BlockOffsets, x: &[R], eps: R, cache: Option<&mut BlockCache<R>>) -> Vec<R> {
    let (k, f) = (o.k, o.f);
    let l = x.len() / k;
    let sl = |off: usize, n: usize| &p[off..off + n];
    let (u1, xhat1, rstd1) = layer_norm(x, k, sl(o.ln1_w(), k), sl(o.ln1_b(), k), eps);
    let proj = |i: usize, inp: &[R]| linear(inp, sl(o.proj_w(i), k * k), sl(o.proj_b(i), k), k, k);
    let (q, kk, v) = (proj(0, &u1), proj(1, &u1), proj(2, &u1));
    let attn = attention_weights(&q, &kk, k);
    let av = attend(&attn, &v, k);
    let ao = proj(3, &av);
    let x1: Vec<R> = x.iter().zip(&ao).map(|(a, b)| *a + *b).collect();
    let (u2, xhat2, rstd2) = layer_norm(&x1, k, sl(o.ln2_w(), k), sl(o.ln2_b(), k), eps);
    let hpre = linear(&u2, sl(o.fc1_w(), f * k), sl(o.fc1_b(), f), k, f);
    let h: Vec<R> = hpre.iter().map(|v| v.max(R::zero())).collect();
    let ff = linear(&h, sl(o.fc2_w(), k * f), sl(o.fc2_b(), k), f, k);
    let y = x1.iter().zip(&ff).map(|(a, b)| *a + *b).collect();
    if let Some(c) = cache {
        *c = BlockCache {
            l,
            xhat1,
            rstd1,
            u1,
            q,
            kk,
            v,
            attn,
            o: av,
            xhat2,
            rstd2,
            u2,
            hpre,
        };
    }
    y
}

/// Backward through [`block_forward`]; accumulates into `grad` (same layout as
/// `p`) and returns `dx`.
pub fn block_backward<R: Real>(p: &[R], o: &BlockOffsets, c: &BlockCache<R>, dy: &[R], grad: &mut [R]) -> Vec<R> {
    let (k, f, l) = (o.k, o.f, c.l);
    let sl = |off: usize, n: usize| &p[off..off + n];

    // Feed-forward branch.
    let h: Vec<R> = c.hpre.iter().map(|v| v.max(R::zero())).collect();
    let (gw, gb) = split2(grad, o.fc2_w(), k * f, o.fc2_b(), k);
    let mut dh = linear_back(dy, &h, sl(o.fc2_w(), k * f), f, k, gw, gb);
    for (d, pre) in dh.iter_mut().zip(&c.hpre) {
        if *pre <= R::zero() {
            *d = R::zero();
        }
    }
    let (gw, gb) = split2(grad, o.fc1_w(), f * k, o.fc1_b(), f);
    let du2 = linear_back(&dh, &c.u2, sl(o.fc1_w(), f * k), k, f, gw, gb);
    let (gw, gb) = split2(grad, o.ln2_w(), k, o.ln2_b(), k);
    let dx1_ln = layer_norm_back(&du2, &c.xhat2, &c.rstd2, sl(o.ln2_w(), k), k, gw, gb);
    let dx1: Vec<R> = dy.iter().zip(&dx1_ln).map(|(a, b)| *a + *b).collect();

    // Attention branch.
    let (gw, gb) = split2(grad, o.proj_w(3), k * k, o.proj_b(3), k);
    let dav = linear_back(&dx1, &c.o, sl(o.proj_w(3), k * k), k, k, gw, gb);
    let scale = R::one() / R::c(k as f64).sqrt();
    let (vt, kt) = (transpose(&c.v, k), transpose(&c.kk, k));
    let mut dq = vec![R::zero(); l * k];
    let mut dkt = vec![R::zero(); l * k];
    let mut dvt = vec![R::zero(); l * k];
    let mut g = vec![R::zero(); l];
    for i in 0..l {
        let arow = &c.attn[i * l..(i + 1) * l];
        let dai = &dav[i * k..(i + 1) * k];
        g.fill(R::zero());
        for cc in 0..k {
            let (d, vrow) = (dai[cc], &vt[cc * l..(cc + 1) * l]);
            for ((gj, vj), (dvj, aj)) in g
                .iter_mut()
                .zip(vrow)
                .zip(dvt[cc * l..(cc + 1) * l].iter_mut().zip(arow))
            {
                *gj += d * *vj;
                *dvj += *aj * d;
            }
        }
        let dotv = dot(arow, &g);
        for (gj, aj) in g.iter_mut().zip(arow) {
            *gj = *aj * (*gj - dotv) * scale;
        }
        for cc in 0..k {
            dq[i * k + cc] = dot(&g, &kt[cc * l..(cc + 1) * l]);
            let qv = c.q[i * k + cc];
            for (dkj, gj) in dkt[cc * l..(cc + 1) * l].iter_mut().zip(&g) {
                *dkj += *gj * qv;
            }
        }
    }
    let (dk, dv) = (transpose(&dkt, l), transpose(&dvt, l));
    let mut du1 = vec![R::zero(); l * k];
    for (i, d) in [(0, &dq), (1, &dk), (2, &dv)] {
        let (gw, gb) = split2(grad, o.proj_w(i), k * k, o.proj_b(i), k);
        let part = linear_back(d, &c.u1, sl(o.proj_w(i), k * k), k, k, gw, gb);
        for (a, b) in du1.iter_mut().zip(part) {
            *a += b;
        }
    }
    let (gw, gb) = split2(grad, o.ln1_w(), k, o.ln1_b(), k);
    let dx_ln = layer_norm_back(&du1, &c.xhat1, &c.rstd1, sl(o.ln1_w(), k), k, gw, gb);
    dx1.iter().zip(&dx_ln).map(|(a, b)| *a + *b).collect()
}

/// Two disjoint mutable windows `[a, a+na)` and `[b, b+nb)` with `a + na <= b`.
pub fn split2<R>(buf: &mut [R], a: usize, na: usize, b: usize, nb: usize) -> (&mut [R], &mut [R]) {
    debug_assert!(a + na <= b);
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + na], &mut hi[..nb])
}
