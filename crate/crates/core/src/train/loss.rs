use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::Scalar;

fn check<T: Scalar>(pred: &[T], target: &[T], eps: f64) -> Result<()> {
    if pred.len() != target.len() {
        bail!(Argument, "prediction has {} elements, target has {}", pred.len(), target.len());
    }
    if pred.is_empty() {
        bail!(Argument, "empty prediction");
    }
    if !(eps > 0.0) {
        bail!(Argument, "Charbonnier epsilon must be positive, got {eps}");
    }
    Ok(())
}

/// Mean of `sqrt((p - t)^2 + eps)` over all elements, accumulated in f64.
pub fn charbonnier_loss<T: Scalar>(pred: &[T], target: &[T], eps: f64) -> Result<f64> {
    check(pred, target, eps)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            libm::sqrt(d * d + eps)
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Derivative of [`charbonnier_loss`] with respect to `pred`.
pub fn charbonnier_grad<T: Scalar>(pred: &[T], target: &[T], eps: f64) -> Result<Vec<T>> {
    check(pred, target, eps)?;
    let m = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            T::from_f64(d / (m * libm::sqrt(d * d + eps)))
        })
        .collect())
}
