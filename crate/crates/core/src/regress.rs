//! Denoising regressions behind a single fit/predict contract.
//!
//! Every method maps history features to estimates of conditional means of
//! future features: ordinary least squares and ridge for linear models,
//! per-coordinate logistic regression for probabilities, coordinate-descent
//! lasso for sparse weights, and a Gram-space conditional mean embedding for
//! kernel models. Fits are deterministic; no randomized solvers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv, ridge_solve, PINV_RTOL};
use crate::serde_mat;

fn default_logistic_max_iter() -> usize {
    100
}

fn default_lasso_max_iter() -> usize {
    10_000
}

fn default_tol() -> f64 {
    1e-8
}

/// Regression method with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum RegressorMethod {
    /// Ordinary least squares (pseudo-inverse fallback when rank deficient).
    Ols,
    /// Ridge regression with penalty `lambda`.
    Ridge { lambda: f64 },
    /// Per-output logistic regression with intercept, damped Newton solver.
    Logistic {
        #[serde(default = "default_logistic_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    /// Per-output lasso with intercept, coordinate descent on standardized
    /// columns.
    Lasso {
        alpha: f64,
        #[serde(default = "default_lasso_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

impl RegressorMethod {
    pub fn logistic() -> Self {
        RegressorMethod::Logistic { max_iter: default_logistic_max_iter(), tol: default_tol() }
    }

    pub fn lasso(alpha: f64) -> Self {
        RegressorMethod::Lasso { alpha, max_iter: default_lasso_max_iter(), tol: default_tol() }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RegressorMethod::Ols => Ok(()),
            RegressorMethod::Ridge { lambda } => {
                if lambda < 0.0 {
                    Err(Error::Param(format!("ridge penalty must be nonnegative, got {lambda}")))
                } else {
                    Ok(())
                }
            }
            RegressorMethod::Logistic { max_iter, tol } => {
                if max_iter == 0 || tol <= 0.0 {
                    Err(Error::Param("logistic regression needs max_iter >= 1 and tol > 0".into()))
                } else {
                    Ok(())
                }
            }
            RegressorMethod::Lasso { alpha, max_iter, tol } => {
                if alpha < 0.0 {
                    Err(Error::Param(format!("lasso penalty must be nonnegative, got {alpha}")))
                } else if max_iter == 0 || tol <= 0.0 {
                    Err(Error::Param("lasso needs max_iter >= 1 and tol > 0".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// One regression choice for each denoising target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    /// Regression from history to future features.
    pub psi: RegressorMethod,
    /// Regression from history to extended-future features.
    pub xi: RegressorMethod,
}

impl RegressorSpec {
    pub fn ols() -> Self {
        RegressorSpec { psi: RegressorMethod::Ols, xi: RegressorMethod::Ols }
    }

    pub fn ridge(lambda: f64) -> Self {
        RegressorSpec {
            psi: RegressorMethod::Ridge { lambda },
            xi: RegressorMethod::Ridge { lambda },
        }
    }

    pub fn logistic() -> Self {
        RegressorSpec { psi: RegressorMethod::logistic(), xi: RegressorMethod::logistic() }
    }

    pub fn validate(&self) -> Result<()> {
        self.psi.validate()?;
        self.xi.validate()
    }
}

/// A fitted regression from history features to a target block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedRegressor {
    pub method: RegressorMethod,
    /// `d_out x d_in` weight matrix.
    #[serde(with = "serde_mat::mat")]
    pub weights: DMatrix<f64>,
    /// Per-output intercept (all zeros for the plain linear methods).
    #[serde(with = "serde_mat::vec")]
    pub intercept: DVector<f64>,
    /// `(1/N) sum r_t r_t^T` over training residuals.
    #[serde(with = "serde_mat::mat")]
    pub residual_cov: DMatrix<f64>,
    pub n_train: usize,
    pub converged: bool,
}

impl FittedRegressor {
    pub fn d_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.nrows()
    }

    /// Prediction for one history feature vector.
    pub fn predict(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        if h.len() != self.d_in() {
            return Err(Error::Dim(format!(
                "regressor trained on dimension {} got input of dimension {}",
                self.d_in(),
                h.len()
            )));
        }
        let mut out = &self.weights * h + &self.intercept;
        if matches!(self.method, RegressorMethod::Logistic { .. }) {
            out.apply(|v| *v = sigmoid(*v));
        }
        Ok(out)
    }

    /// Row-wise prediction for a stack of inputs (`N x d_in` to `N x d_out`).
    pub fn predict_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.d_in() {
            return Err(Error::Dim(format!(
                "regressor trained on dimension {} got inputs of dimension {}",
                self.d_in(),
                x.ncols()
            )));
        }
        let mut out = x * self.weights.transpose();
        for mut row in out.row_iter_mut() {
            row += self.intercept.transpose();
        }
        if matches!(self.method, RegressorMethod::Logistic { .. }) {
            out.apply(|v| *v = sigmoid(*v));
        }
        Ok(out)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_design(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty("regression needs at least one row".into()));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::Dim(format!(
            "design has {} rows but targets have {}",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok(())
}

fn residual_cov(x: &DMatrix<f64>, y: &DMatrix<f64>, fitted: &DMatrix<f64>) -> DMatrix<f64> {
    let r = y - fitted;
    let n = x.nrows() as f64;
    (r.transpose() * &r).scale(1.0 / n)
}

/// Least squares / ridge fit of `Y ~ X W^T` without intercept.
///
/// `lambda = 0` uses a Cholesky solve when the normal equations are positive
/// definite and falls back to a truncated-SVD pseudo-inverse otherwise.
pub fn fit_linear(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<FittedRegressor> {
    check_design(x, y)?;
    let sxx = x.transpose() * x;
    let syx = y.transpose() * x;
    let weights = ridge_solve(&sxx, &syx, lambda)?;
    let fitted = x * weights.transpose();
    let method = if lambda == 0.0 { RegressorMethod::Ols } else { RegressorMethod::Ridge { lambda } };
    Ok(FittedRegressor {
        method,
        residual_cov: residual_cov(x, y, &fitted),
        intercept: DVector::zeros(weights.nrows()),
        n_train: x.nrows(),
        converged: true,
        weights,
    })
}

fn bernoulli_loglik(p: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut ll = 0.0;
    for i in 0..p.len() {
        let pi = p[i].clamp(1e-12, 1.0 - 1e-12);
        ll += y[i] * pi.ln() + (1.0 - y[i]) * (1.0 - pi).ln();
    }
    ll
}

/// Per-output logistic regression with intercept.
///
/// Targets may be soft labels in `[0, 1]`. The solver is damped Newton with
/// an L2 jitter of 1e-8 on the Hessian; on non-convergence the best iterate
/// is returned with `converged = false`.
pub fn fit_logistic(x: &DMatrix<f64>, y: &DMatrix<f64>, max_iter: usize, tol: f64) -> Result<FittedRegressor> {
    check_design(x, y)?;
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Param("logistic targets must lie in [0, 1]".into()));
    }
    let n = x.nrows();
    let d = x.ncols();
    let mut xa = DMatrix::zeros(n, d + 1);
    xa.columns_mut(0, d).copy_from(x);
    xa.column_mut(d).fill(1.0);

    let mut weights = DMatrix::zeros(y.ncols(), d);
    let mut intercept = DVector::zeros(y.ncols());
    let mut converged = true;
    for j in 0..y.ncols() {
        let yj = y.column(j).into_owned();
        let mut beta = DVector::zeros(d + 1);
        let mut p = (&xa * &beta).map(sigmoid);
        let mut ll = bernoulli_loglik(&p, &yj);
        let mut ok = false;
        for _ in 0..max_iter {
            let grad = xa.transpose() * (&yj - &p);
            let w = p.map(|v| (v * (1.0 - v)).max(0.0));
            let mut xw = xa.clone();
            for r in 0..n {
                let mut row = xw.row_mut(r);
                row *= w[r];
            }
            let mut hess = xa.transpose() * xw;
            hess += DMatrix::identity(d + 1, d + 1).scale(1e-8);
            let step = match hess.clone().cholesky() {
                Some(c) => c.solve(&grad),
                None => pinv(&hess, PINV_RTOL) * &grad,
            };
            // backtrack until the log-likelihood stops decreasing
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = &beta + &step * scale;
                let cand_p = (&xa * &cand).map(sigmoid);
                let cand_ll = bernoulli_loglik(&cand_p, &yj);
                if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                    let delta = (&cand - &beta).amax();
                    beta = cand;
                    p = cand_p;
                    ll = cand_ll;
                    accepted = true;
                    if delta < tol {
                        ok = true;
                    }
                    break;
                }
                scale *= 0.5;
            }
            if !accepted || ok {
                ok = ok || !accepted;
                break;
            }
        }
        converged &= ok;
        weights.row_mut(j).copy_from(&beta.rows(0, d).transpose());
        intercept[j] = beta[d];
    }

    let method = RegressorMethod::Logistic { max_iter, tol };
    let mut fitted = &xa.columns(0, d) * weights.transpose();
    for mut row in fitted.row_iter_mut() {
        row += intercept.transpose();
    }
    fitted.apply(|v| *v = sigmoid(*v));
    Ok(FittedRegressor {
        method,
        residual_cov: residual_cov(x, y, &fitted),
        weights,
        intercept,
        n_train: n,
        converged,
    })
}

/// Soft-threshold operator `sign(z) * max(|z| - t, 0)`.
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Coordinate descent for one output on pre-standardized columns.
///
/// `xs` holds centered columns scaled to unit population variance, `yc` the
/// centered target. The penalty on standardized coefficients is `alpha / s_j`
/// so the solution matches the raw-coordinate objective
/// `||y - b - X beta||^2 / (2N) + alpha * ||beta||_1` exactly.
fn lasso_one(
    xs: &DMatrix<f64>,
    yc: &DVector<f64>,
    scales: &DVector<f64>,
    alive: &[bool],
    alpha: f64,
    max_iter: usize,
    tol: f64,
) -> (DVector<f64>, bool) {
    let n = xs.nrows() as f64;
    let d = xs.ncols();
    let mut gamma = DVector::zeros(d);
    let mut r = yc.clone();
    let mut converged = false;
    for _ in 0..max_iter {
        let mut max_raw_delta = 0.0f64;
        for j in 0..d {
            if !alive[j] {
                continue;
            }
            let col = xs.column(j);
            let rho = gamma[j] + col.dot(&r) / n;
            let new = soft_threshold(rho, alpha / scales[j]);
            let delta = new - gamma[j];
            if delta != 0.0 {
                r -= col * delta;
                gamma[j] = new;
            }
            max_raw_delta = max_raw_delta.max((delta / scales[j]).abs());
        }
        if max_raw_delta < tol {
            converged = true;
            break;
        }
    }
    (gamma, converged)
}

/// Lasso fit, one independent problem per output column.
///
/// Columns are standardized internally and weights restored to raw
/// coordinates; the intercept is unpenalized and recovered from the column
/// means. Returned solutions satisfy the subgradient optimality conditions
/// within 1e-6 when converged.
pub fn fit_lasso(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    alpha: f64,
    max_iter: usize,
    tol: f64,
) -> Result<FittedRegressor> {
    check_design(x, y)?;
    if alpha < 0.0 {
        return Err(Error::Param(format!("lasso penalty must be nonnegative, got {alpha}")));
    }
    let n = x.nrows();
    let d = x.ncols();
    let nf = n as f64;

    let mut means = DVector::zeros(d);
    let mut scales = DVector::from_element(d, 1.0);
    let mut alive = vec![true; d];
    let mut xs = x.clone();
    for j in 0..d {
        let mean = x.column(j).mean();
        means[j] = mean;
        let var = x.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
        if var <= 0.0 {
            // constant column: its effect is absorbed by the intercept
            alive[j] = false;
            xs.column_mut(j).fill(0.0);
        } else {
            scales[j] = var.sqrt();
            for i in 0..n {
                xs[(i, j)] = (x[(i, j)] - mean) / scales[j];
            }
        }
    }

    let mut weights = DMatrix::zeros(y.ncols(), d);
    let mut intercept = DVector::zeros(y.ncols());
    let mut converged = true;
    for c in 0..y.ncols() {
        let y_mean = y.column(c).mean();
        let yc = DVector::from_fn(n, |i, _| y[(i, c)] - y_mean);
        let (gamma, ok) = lasso_one(&xs, &yc, &scales, &alive, alpha, max_iter, tol);
        converged &= ok;
        let mut b0 = y_mean;
        for j in 0..d {
            let beta_j = if alive[j] { gamma[j] / scales[j] } else { 0.0 };
            weights[(c, j)] = beta_j;
            b0 -= beta_j * means[j];
        }
        intercept[c] = b0;
    }

    let method = RegressorMethod::Lasso { alpha, max_iter, tol };
    let mut fitted = x * weights.transpose();
    for mut row in fitted.row_iter_mut() {
        row += intercept.transpose();
    }
    Ok(FittedRegressor {
        method,
        residual_cov: residual_cov(x, y, &fitted),
        weights,
        intercept,
        n_train: n,
        converged,
    })
}

/// Fits `Y ~ X` with the given method.
pub fn fit(method: &RegressorMethod, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<FittedRegressor> {
    method.validate()?;
    match *method {
        RegressorMethod::Ols => fit_linear(x, y, 0.0),
        RegressorMethod::Ridge { lambda } => fit_linear(x, y, lambda),
        RegressorMethod::Logistic { max_iter, tol } => fit_logistic(x, y, max_iter, tol),
        RegressorMethod::Lasso { alpha, max_iter, tol } => fit_lasso(x, y, alpha, max_iter, tol),
    }
}

/// Conditional-mean-embedding weights `B = (G + lambda I)^-1 G` for a
/// symmetric PSD Gram matrix.
pub fn fit_cme(g_zz: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if g_zz.nrows() != g_zz.ncols() {
        return Err(Error::Dim(format!("Gram matrix must be square, got {}x{}", g_zz.nrows(), g_zz.ncols())));
    }
    if lambda <= 0.0 {
        return Err(Error::Param(format!("embedding ridge penalty must be positive, got {lambda}")));
    }
    let n = g_zz.nrows();
    let sym = (g_zz + g_zz.transpose()).scale(0.5);
    let reg = &sym + DMatrix::identity(n, n).scale(lambda);
    match reg.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&sym)),
        None => Err(Error::Numerical("regularized Gram matrix is not positive definite".into())),
    }
}
