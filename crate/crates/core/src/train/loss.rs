use crate::real::Real;

use super::config::LossKind;

/// Per-sample Huber loss of residual `r = pred − target` and its derivative.
pub fn huber<R: Real>(r: R, delta: R) -> (R, R) {
    let half = R::c(0.5);
    if r.abs() <= delta {
        (half * r * r, r)
    } else {
        (delta * (r.abs() - half * delta), delta * r.signum())
    }
}

/// Per-sample squared error and its derivative.
pub fn squared<R: Real>(r: R) -> (R, R) {
    (r * r, R::c(2.0) * r)
}

pub fn sample_loss<R: Real>(kind: LossKind, delta: f64) -> impl Fn(R, R) -> (R, R) + Sync + Copy {
    let delta = R::c(delta);
    move |pred: R, target: R| match kind {
        LossKind::Huber => huber(pred - target, delta),
        LossKind::Mse => squared(pred - target),
    }
}

/// Mean Huber loss over a batch.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> f64 {
    mean_loss(pred, target, |r| huber(r, delta).0)
}

/// Mean squared error over a batch.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> f64 {
    mean_loss(pred, target, |r| squared(r).0)
}

fn mean_loss(pred: &[f64], target: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| f(p - t)).sum::<f64>() / pred.len() as f64
}
