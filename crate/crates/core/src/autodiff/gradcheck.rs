//! Central finite differences, kept independent of the backward pass so it
//! can serve as an oracle for it.

use super::tensor::Tensor;

/// `∂f/∂x` by central differences with step `h`.
pub fn numerical_gradient(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Relative error `|a − n| / max(|a|, |n|, floor)` for one entry.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Largest relative error across all entries, or the offending index.
pub fn check_gradient(analytic: &Tensor, numeric: &Tensor, tol: f64) -> Result<f64, String> {
    check_gradient_atol(analytic, numeric, tol, 0.0)
}

/// As [`check_gradient`], but entries whose absolute difference is below
/// `atol` pass regardless of their relative error. Useful when some
/// gradients are near the finite-difference round-off level.
pub fn check_gradient_atol(analytic: &Tensor, numeric: &Tensor, tol: f64, atol: f64) -> Result<f64, String> {
    if analytic.shape() != numeric.shape() {
        return Err(format!(
            "shape mismatch {:?} vs {:?}",
            analytic.shape(),
            numeric.shape()
        ));
    }
    let mut worst = 0.0f64;
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = relative_error(a, n);
        if e >= tol && (a - n).abs() >= atol {
            return Err(format!("entry {i}: analytic {a:e} vs numeric {n:e} (rel err {e:e})"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}
