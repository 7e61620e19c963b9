//! Gaussian filtering plugin over first-plus-second moment vectors.
//!
//! States and extended states are stacked moment vectors `[mu; vec(M2)]`
//! describing a Gaussian over an observation window. Filtering reads the
//! extended moments as a joint Gaussian over (current observation, next
//! window), conditions on the observation, and re-stacks the result;
//! prediction marginalizes the observation block instead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize_clip;
use crate::serde_mat;

/// Gaussian over a stacked window of observations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianBelief {
    #[serde(with = "serde_mat::vec")]
    pub mean: DVector<f64>,
    /// Symmetric PSD covariance (negative eigenvalues clipped on
    /// construction).
    #[serde(with = "serde_mat::mat")]
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Splits a stacked moment dimension `d + d^2` back into `d`.
fn moment_dim(len: usize) -> Result<usize> {
    let mut d = ((len as f64).sqrt() as usize).saturating_sub(1);
    while d * d + d < len {
        d += 1;
    }
    if d * d + d != len {
        return Err(Error::Dim(format!("length {len} is not of the form d + d^2")));
    }
    Ok(d)
}

/// Interprets a stacked moment vector as a Gaussian belief.
///
/// The covariance is the second-moment block minus the outer product of the
/// mean, symmetrized with negative eigenvalues clipped to zero. Returns the
/// belief together with the magnitude of the most negative eigenvalue that
/// was clipped (zero when the matrix was already PSD).
pub fn gaussian_extended_from_moments(p: &DVector<f64>) -> Result<(GaussianBelief, f64)> {
    let d = moment_dim(p.len())?;
    let mean = p.rows(0, d).into_owned();
    let mut m2 = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m2[(i, j)] = p[d + i * d + j];
        }
    }
    let raw_cov = &m2 - &mean * mean.transpose();
    let (cov, min_eig) = symmetrize_clip(&raw_cov);
    let clip = (-min_eig).max(0.0);
    if clip > 1e-6 {
        log::debug!("moment covariance clipped by {clip:.3e}");
    }
    Ok((GaussianBelief { mean, cov }, clip))
}

/// Conditions a joint Gaussian over (observed block, future block) on the
/// observed value.
///
/// The observed block occupies the first `d_o` coordinates. The observation
/// covariance receives a relative diagonal jitter of `1e-9 * tr / d_o`
/// before inversion; if it is still not positive definite the call fails.
pub fn gaussian_condition(belief: &GaussianBelief, d_o: usize, o: &DVector<f64>) -> Result<GaussianBelief> {
    let e = belief.dim();
    if d_o == 0 || d_o > e {
        return Err(Error::Dim(format!("observed block of size {d_o} in a belief of dimension {e}")));
    }
    if o.len() != d_o {
        return Err(Error::Dim(format!("observation has dimension {} but the block is {d_o}", o.len())));
    }
    let d_f = e - d_o;
    let mu_o = belief.mean.rows(0, d_o).into_owned();
    let mu_f = belief.mean.rows(d_o, d_f).into_owned();
    let sigma_oo = belief.cov.view((0, 0), (d_o, d_o)).into_owned();
    let sigma_fo = belief.cov.view((d_o, 0), (d_f, d_o)).into_owned();
    let sigma_ff = belief.cov.view((d_o, d_o), (d_f, d_f)).into_owned();

    let jitter = 1e-9 * sigma_oo.trace().max(0.0) / d_o as f64;
    let reg = &sigma_oo + DMatrix::identity(d_o, d_o).scale(jitter.max(1e-300));
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::Numerical("observation covariance is singular after jitter".into()))?;
    // gain = Sigma_fo * Sigma_oo^-1, via solving against the transpose
    let gain = chol.solve(&sigma_fo.transpose()).transpose();
    let mean = &mu_f + &gain * (o - &mu_o);
    let cov_raw = &sigma_ff - &gain * sigma_fo.transpose();
    let (cov, _) = symmetrize_clip(&cov_raw);
    Ok(GaussianBelief { mean, cov })
}

/// Drops the observed block, keeping the marginal over the future block.
pub fn gaussian_marginalize(belief: &GaussianBelief, d_o: usize) -> Result<GaussianBelief> {
    let e = belief.dim();
    if d_o >= e {
        return Err(Error::Dim(format!("cannot drop a block of size {d_o} from dimension {e}")));
    }
    let d_f = e - d_o;
    Ok(GaussianBelief {
        mean: belief.mean.rows(d_o, d_f).into_owned(),
        cov: belief.cov.view((d_o, d_o), (d_f, d_f)).into_owned(),
    })
}

/// Re-stacks a belief into a moment vector `[mu; vec(cov + mu mu^T)]`.
pub fn belief_to_state(belief: &GaussianBelief) -> DVector<f64> {
    let d = belief.dim();
    let m2 = &belief.cov + &belief.mean * belief.mean.transpose();
    let mut out = DVector::zeros(d + d * d);
    out.rows_mut(0, d).copy_from(&belief.mean);
    for i in 0..d {
        for j in 0..d {
            out[d + i * d + j] = m2[(i, j)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    use crate::features::moment_stack;

    #[test]
    fn constant_vector_moments_have_zero_covariance() {
        let x = DVector::from_vec(vec![1.5, -2.0]);
        let (belief, clip) = gaussian_extended_from_moments(&moment_stack(&x)).unwrap();
        assert_abs_diff_eq!(belief.mean, x, epsilon = 1e-12);
        assert!(belief.cov.amax() < 1e-12);
        assert_eq!(clip, 0.0);
    }

    #[test]
    fn population_moments_round_trip() {
        let mu = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, -0.3, 0.0, -0.3, 0.5]);
        let cov = &a * a.transpose();
        let belief = GaussianBelief { mean: mu.clone(), cov: cov.clone() };
        let state = belief_to_state(&belief);
        let (back, clip) = gaussian_extended_from_moments(&state).unwrap();
        assert_abs_diff_eq!(back.mean, mu, epsilon = 1e-10);
        assert_abs_diff_eq!(back.cov, cov, epsilon = 1e-10);
        assert!(clip < 1e-10);
    }

    #[test]
    fn zero_cross_covariance_leaves_mean_unchanged() {
        let belief = GaussianBelief {
            mean: DVector::from_vec(vec![0.3, 1.0, 2.0]),
            cov: DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 1.0, 0.4, 0.0, 0.4, 1.5]),
        };
        let cond = gaussian_condition(&belief, 1, &DVector::from_vec(vec![5.0])).unwrap();
        assert_abs_diff_eq!(cond.mean, DVector::from_vec(vec![1.0, 2.0]), epsilon = 1e-9);
        assert_abs_diff_eq!(cond.cov, belief.cov.view((1, 1), (2, 2)).into_owned(), epsilon = 1e-9);
    }

    #[test]
    fn bivariate_conditioning_matches_textbook_identity() {
        let rho = 0.7;
        let belief = GaussianBelief {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
        };
        let cond = gaussian_condition(&belief, 1, &DVector::from_vec(vec![1.3])).unwrap();
        assert_abs_diff_eq!(cond.mean[0], rho * 1.3, epsilon = 1e-8);
        assert_abs_diff_eq!(cond.cov[(0, 0)], 1.0 - rho * rho, epsilon = 1e-8);
    }

    #[test]
    fn marginalize_keeps_future_block() {
        let belief = GaussianBelief {
            mean: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            cov: DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.5, 0.0, 0.5, 3.0]),
        };
        let marg = gaussian_marginalize(&belief, 1).unwrap();
        assert_abs_diff_eq!(marg.mean, DVector::from_vec(vec![2.0, 3.0]), epsilon = 1e-14);
        assert_abs_diff_eq!(marg.cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]), epsilon = 1e-14);
    }

    #[test]
    fn indefinite_second_moments_are_clipped() {
        // second-moment block smaller than mu mu^T forces a negative eigenvalue
        let mut p = DVector::zeros(2);
        p[0] = 2.0;
        p[1] = 1.0; // claims E[x^2] = 1 < mu^2 = 4
        let (belief, clip) = gaussian_extended_from_moments(&p).unwrap();
        assert!(clip > 2.9);
        assert!(belief.cov[(0, 0)] >= 0.0);
    }

    #[test]
    fn malformed_lengths_are_rejected() {
        assert!(gaussian_extended_from_moments(&DVector::zeros(5)).is_err());
        assert!(moment_dim(6).is_ok());
        assert!(moment_dim(7).is_err());
    }
}
