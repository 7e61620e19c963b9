//! Reference Kalman filter recursion and discrete Lyapunov fixed point.

use nalgebra::{DMatrix, DVector};

/// A linear-Gaussian state space model: s' = T s + nu, o = O s + eps.
#[derive(Clone, Debug)]
pub struct KalmanRef {
    pub t: DMatrix<f64>,
    pub o: DMatrix<f64>,
    pub state_noise: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
}

impl KalmanRef {
    /// One-step predictive observation means E[o_t | o_{1:t-1}] for every t,
    /// by the textbook covariance-form recursion.
    pub fn predictive_means(&self, obs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut mean = self.init_mean.clone();
        let mut cov = self.init_cov.clone();
        let mut out = Vec::with_capacity(obs.len());
        for y in obs {
            out.push(&self.o * &mean);
            let s = &self.o * &cov * self.o.transpose() + &self.obs_noise;
            let s_inv = s.try_inverse().expect("innovation covariance singular");
            let gain = &cov * self.o.transpose() * s_inv;
            let innov = y - &self.o * &mean;
            mean += &gain * innov;
            let n = cov.nrows();
            cov = (DMatrix::identity(n, n) - &gain * &self.o) * cov;
            // advance
            mean = &self.t * mean;
            cov = &self.t * cov * self.t.transpose() + &self.state_noise;
        }
        out
    }
}

/// Solves X = A X A' + Q by fixed-point iteration, assuming the spectral
/// radius of A is below one.
pub fn lyapunov_fixed_point(a: &DMatrix<f64>, q: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut x = q.clone();
    for _ in 0..100_000 {
        let next = a * &x * a.transpose() + q;
        if (&next - &x).abs().max() < tol {
            return next;
        }
        x = next;
    }
    x
}
