//! Frozen second implementation of the finite-sample bound arithmetic.
//!
//! Kept as straight-line expressions so the library's structured version
//! (which also reports intermediates) is checked against an independent
//! transcription of the same formulas.

/// Deviation bound for an empirical cross-covariance in operator norm.
#[allow(clippy::too_many_arguments)]
pub fn cross_bound_reference(
    c: f64,
    lambda1_x: f64,
    lambda1_y: f64,
    trace_x: f64,
    trace_y: f64,
    norm_yx: f64,
    n: usize,
    delta: f64,
) -> f64 {
    let v = c * c * lambda1_x.max(lambda1_y) + norm_yx * norm_yx;
    let k = c * c * (trace_x + trace_y);
    let t = f64::max(2.6, 2.0 * (4.0 * k / (delta * v)).ln());
    (2.0 * v * t / n as f64).sqrt() + (c * c + norm_yx) * t / (3.0 * n as f64)
}

/// Deviation bound for an empirical covariance in operator norm.
pub fn cov_bound_reference(c: f64, lambda1_x: f64, trace_x: f64, n: usize, delta: f64) -> f64 {
    let v = c * c * lambda1_x + lambda1_x * lambda1_x;
    let k = c * c * trace_x;
    let t = f64::max(2.6, 2.0 * (4.0 * k / (delta * v)).ln());
    (2.0 * v * t / n as f64).sqrt() + (c * c + lambda1_x) * t / (3.0 * n as f64)
}

/// Error scaling of a fixed-design least-squares stage.
pub fn ols_bound_reference(d_x: usize, d_y: usize, d_z: usize, n: usize, delta: f64, scale: f64) -> f64 {
    scale * (d_z as f64 / n as f64).sqrt() * (((d_x + d_y) as f64) / delta).ln()
}
