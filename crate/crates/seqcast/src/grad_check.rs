//! Central finite-difference utilities used by the gradient tests.

/// Central finite-difference gradient of `f` at `x0` with step `eps`.
pub fn central_diff(x0: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; x0.len()];
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        x[i] = x0[i] + eps;
        let hi = f(&x);
        x[i] = x0[i] - eps;
        let lo = f(&x);
        x[i] = x0[i];
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Elementwise relative error with an absolute floor so that near-zero
/// gradients compare on an absolute scale.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / f64::max(1e-4, f64::max(a.abs(), n.abs())))
        .fold(0.0, f64::max)
}
