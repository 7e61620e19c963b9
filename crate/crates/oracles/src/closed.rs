//! Closed forms and finite differences.

use nalgebra::{DMatrix, DVector};

/// Scalar soft-thresholding operator: sign(z) * max(|z| - a, 0).
pub fn soft_threshold(z: f64, a: f64) -> f64 {
    if z > a {
        z - a
    } else if z < -a {
        z + a
    } else {
        0.0
    }
}

/// Largest violation of the lasso stationarity conditions for the objective
/// (1/2N)||y - X b - b0|| ^2 + a * ||b||_1.
///
/// For zero coordinates the correlation must stay within `a`; for active
/// coordinates it must equal `a` with the sign of the coordinate.
pub fn lasso_kkt_residual(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    beta: &DVector<f64>,
    intercept: f64,
) -> f64 {
    let n = x.nrows() as f64;
    let resid = y - x * beta - DVector::from_element(x.nrows(), intercept);
    let corr = x.transpose() * resid / n;
    let mut worst: f64 = 0.0;
    for j in 0..beta.len() {
        let viol = if beta[j] == 0.0 {
            (corr[j].abs() - alpha).max(0.0)
        } else {
            (corr[j] - alpha * beta[j].signum()).abs()
        };
        worst = worst.max(viol);
    }
    worst
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[i] += h;
        lo[i] -= h;
        g[i] = (f(&hi) - f(&lo)) / (2.0 * h);
    }
    g
}
