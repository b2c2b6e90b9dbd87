//! Central finite-difference gradient checking.

pub const DEFAULT_EPS: f64 = 1e-4;

/// Central-difference gradient of a scalar function with respect to `x`,
/// evaluated by perturbing one element at a time.
pub fn numerical_gradient<F>(x: &mut [f64], eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(x);
        x[i] = orig - eps;
        let fm = f(x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// `|a - b| / max(|a| + |b|, floor)`: symmetric relative error with an
/// absolute floor so near-zero gradients compare absolutely.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(floor)
}

/// Largest elementwise relative error between two gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| relative_error(a, b, 1e-6))
        .fold(0.0, f64::max)
}
