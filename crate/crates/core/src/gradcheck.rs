//! Central finite differences used as an independent check on the
//! hand-derived gradients.

use crate::losses::{self, LossError, LossGradient, LossSpec, PairPoint};

/// Default perturbation size.
pub const DEFAULT_STEP: f64 = 1e-6;

/// `(f(x+h) − f(x−h)) / 2h`.
pub fn central_difference<E>(mut f: impl FnMut(f64) -> Result<f64, E>, x: f64, h: f64) -> Result<f64, E> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// `|a − b| / max(|a|, |b|)`, defined as 0 when both are 0.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Norm-wise relative error `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`.
pub fn relative_error_norm(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Finite-difference estimate of `(∂L/∂p_w, ∂L/∂p_l)` from loss
/// evaluations alone.
pub fn loss_gradient_fd(point: &PairPoint, spec: &LossSpec, h: f64) -> Result<LossGradient, LossError> {
    let d_p_w = central_difference(|p_w| losses::loss(&PairPoint { p_w, ..*point }, spec), point.p_w, h)?;
    let d_p_l = central_difference(|p_l| losses::loss(&PairPoint { p_l, ..*point }, spec), point.p_l, h)?;
    Ok(LossGradient { d_p_w, d_p_l })
}

/// Finite-difference gradient of `f` over every coordinate of `x`.
pub fn gradient_fd<E>(mut f: impl FnMut(&[f64]) -> Result<f64, E>, x: &[f64], h: f64) -> Result<Vec<f64>, E> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}
