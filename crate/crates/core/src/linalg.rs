//! Small dense linear algebra helpers shared across the crate.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Relative singular value cutoff used by pseudo-inverse fallbacks.
pub const PINV_RTOL: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse via SVD, dropping singular values below
/// `rtol` times the largest.
pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.transpose();
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let smax = svd.singular_values.max();
    let cut = rtol * smax;
    let mut sinv = DVector::zeros(svd.singular_values.len());
    for i in 0..sinv.len() {
        let s = svd.singular_values[i];
        if s > cut && s > 0.0 {
            sinv[i] = 1.0 / s;
        }
    }
    v_t.transpose() * DMatrix::from_diagonal(&sinv) * u.transpose()
}

/// Solves `W (sxx + lambda I) = syx` for the regression operator
/// `W = syx (sxx + lambda I)^-1`, with a pseudo-inverse fallback when the
/// regularized matrix is not positive definite.
pub fn ridge_solve(sxx: &DMatrix<f64>, syx: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if sxx.nrows() != sxx.ncols() || syx.ncols() != sxx.nrows() {
        return Err(Error::Dim(format!(
            "ridge solve: sxx is {}x{}, syx is {}x{}",
            sxx.nrows(),
            sxx.ncols(),
            syx.nrows(),
            syx.ncols()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::Param(format!("negative ridge parameter {lambda}")));
    }
    let reg = sxx + DMatrix::identity(sxx.nrows(), sxx.ncols()).scale(lambda);
    if let Some(chol) = reg.clone().cholesky() {
        // solve reg * Z = syx^T, then W = Z^T
        let z = chol.solve(&syx.transpose());
        Ok(z.transpose())
    } else {
        Ok(syx * pinv(&reg, PINV_RTOL))
    }
}

/// Symmetrizes `m` and clips negative eigenvalues to zero.
///
/// Returns the repaired matrix and the most negative eigenvalue seen before
/// clipping (zero when none were negative).
pub fn symmetrize_clip(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()).scale(0.5);
    let eig = sym.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig >= 0.0 {
        return (sym, 0.0);
    }
    let clipped = DVector::from_fn(eig.eigenvalues.len(), |i, _| eig.eigenvalues[i].max(0.0));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    ((&repaired + repaired.transpose()).scale(0.5), min_eig)
}

/// Operator norm of a symmetric matrix by power iteration on `m^2`,
/// run to relative tolerance `rtol`.
pub fn op_norm_sym(m: &DMatrix<f64>, rtol: f64) -> f64 {
    assert_eq!(m.nrows(), m.ncols(), "operator norm needs a square matrix");
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic, generically non-orthogonal start
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt());
    v /= v.norm();
    let mut est = 0.0f64;
    for _ in 0..10_000 {
        let w = m * (m * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        let done = (next - est).abs() <= rtol * next.max(1e-300);
        est = next;
        v = w / norm;
        if done {
            break;
        }
    }
    est
}

/// Median of a slice; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in median input"));
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinv_inverts_full_rank() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let p = pinv(&m, PINV_RTOL);
        assert_abs_diff_eq!((p * m), DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn pinv_drops_null_directions() {
        // rank-1 matrix: pinv(m) * m is the projector onto the row space
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let p = pinv(&m, PINV_RTOL);
        let proj = &p * &m;
        assert_abs_diff_eq!(proj.clone() * proj.clone(), proj, epsilon = 1e-12);
    }

    #[test]
    fn op_norm_matches_eigendecomposition() {
        let base = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.3, 2.0, -0.5, 1.1, 0.3, 1.1, 4.0]);
        let direct = base
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |a, &e: &f64| a.max(e.abs()));
        assert_abs_diff_eq!(op_norm_sym(&base, 1e-10), direct, epsilon = 1e-8);
    }

    #[test]
    fn clip_repairs_indefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (fixed, worst) = symmetrize_clip(&m);
        assert!(worst < 0.0);
        assert!(fixed.clone().symmetric_eigen().eigenvalues.min() >= -1e-12);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
