//! The two-stage learning pipeline and the generic filter/predict loop.
//!
//! Stage 1 regresses future and extended-future features on history features,
//! replacing noisy targets with their conditional-mean estimates. Stage 2
//! fits the linear operator `W` mapping denoised states to denoised extended
//! states by ridge regression over the summed outer products. A trained
//! model tracks a predictive state `q_t`: each step computes the extended
//! state `p_t = W q_t` and hands it to the bound plugin, which either
//! conditions on the observed value (filtering) or marginalizes it
//! (prediction).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_triplets, learn_basis, moment_stack, Basis, FeatureSpec, TripletDataset};
use crate::gaussian::{
    belief_to_state, gaussian_condition, gaussian_extended_from_moments, gaussian_marginalize, GaussianBelief,
};
use crate::hmm::{
    hmm_filter, hmm_normalizer_from_states, hmm_obs_distribution, hmm_operators_from_w, hmm_predict, HmmOperators,
};
use crate::linalg::{pinv, ridge_solve, PINV_RTOL};
use crate::regress::{fit, fit_linear, FittedRegressor, RegressorSpec};
use crate::seqdata::{Observation, ObservationSeq};
use crate::serde_mat;

/// The fitted pair of denoising regressions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct S1Model {
    /// History to future features.
    pub reg_psi: FittedRegressor,
    /// History to extended-future features.
    pub reg_xi: FittedRegressor,
}

/// Runs both denoising regressions and evaluates them on the training
/// histories, returning the model and the denoised rows.
pub fn s1_denoise(
    data: &TripletDataset,
    spec: &RegressorSpec,
) -> Result<(S1Model, DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    let reg_psi = fit(&spec.psi, &data.h, &data.psi)?;
    let reg_xi = fit(&spec.xi, &data.h, &data.xi)?;
    let x_hat = reg_psi.predict_rows(&data.h)?;
    let y_hat = reg_xi.predict_rows(&data.h)?;
    Ok((S1Model { reg_psi, reg_xi }, x_hat, y_hat))
}

/// Ridge estimate of the extended-state operator from denoised rows:
/// `W = (sum y x^T)(sum x x^T + lambda I)^-1`.
///
/// `lambda = 0` solves the least-squares problem by a truncated
/// pseudo-inverse of the rows themselves, avoiding the condition-number
/// squaring of the normal equations.
pub fn s2_regress(x_hat: &DMatrix<f64>, y_hat: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x_hat.nrows() == 0 {
        return Err(Error::Empty("stage-2 regression needs at least one row".into()));
    }
    if x_hat.nrows() != y_hat.nrows() {
        return Err(Error::Dim(format!(
            "stage-2 inputs have {} rows but outputs have {}",
            x_hat.nrows(),
            y_hat.nrows()
        )));
    }
    if lambda == 0.0 {
        return Ok((pinv(x_hat, PINV_RTOL) * y_hat).transpose());
    }
    let sxx = x_hat.transpose() * x_hat;
    let syx = y_hat.transpose() * x_hat;
    ridge_solve(&sxx, &syx, lambda)
}

/// Scale-aware default stage-2 ridge: `1e-4 * tr(sum x x^T) / d`.
pub fn default_s2_lambda(x_hat: &DMatrix<f64>) -> f64 {
    let d = x_hat.ncols().max(1) as f64;
    1e-4 * x_hat.norm_squared() / d
}

/// Mean of the future features at the first extractable time step of each
/// sequence; with a single sequence the mean runs over all its rows instead.
pub fn estimate_initial_state(data: &TripletDataset) -> DVector<f64> {
    if data.seq_ranges.len() == 1 {
        let n = data.psi.nrows() as f64;
        return data.psi.row_sum().transpose() / n;
    }
    let mut q1 = DVector::zeros(data.psi.ncols());
    for start in data.first_rows() {
        q1 += data.psi.row(start).transpose();
    }
    q1 / data.seq_ranges.len() as f64
}

/// Which plugin interprets states and extended states.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "plugin", rename_all = "snake_case")]
pub enum PluginBinding {
    /// Discrete observable-operator filtering; carries the normalizer.
    Hmm {
        #[serde(with = "serde_mat::vec")]
        b_inf: DVector<f64>,
    },
    /// Gaussian moment filtering; carries the per-step observation
    /// dimension.
    Gaussian { obs_dim: usize },
}

/// A trained two-stage model with its filtering plugin.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictiveModel {
    /// Extended-state operator, `d_xi x d_psi`.
    #[serde(with = "serde_mat::mat")]
    pub w: DMatrix<f64>,
    /// Initial predictive state.
    #[serde(with = "serde_mat::vec")]
    pub q1: DVector<f64>,
    /// Feature layout of states (the projection basis lives here).
    pub spec: FeatureSpec,
    pub plugin: PluginBinding,
    /// Stage-2 ridge value used in training.
    pub lambda_s2: f64,
    /// Probability floor applied when clamping discrete distributions.
    pub clamp_eps: f64,
}

/// One-step-ahead observation prediction.
#[derive(Clone, Debug)]
pub enum PredictedObs {
    /// Probability vector over symbols.
    Distribution(DVector<f64>),
    /// Mean and covariance of the next observation vector.
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl PredictedObs {
    /// Probability vector, if discrete.
    pub fn distribution(&self) -> Option<&DVector<f64>> {
        match self {
            PredictedObs::Distribution(d) => Some(d),
            PredictedObs::Gaussian { .. } => None,
        }
    }

    /// Predicted mean, if Gaussian.
    pub fn mean(&self) -> Option<&DVector<f64>> {
        match self {
            PredictedObs::Gaussian { mean, .. } => Some(mean),
            PredictedObs::Distribution(_) => None,
        }
    }
}

/// Filtering pass over one sequence.
#[derive(Clone, Debug)]
pub struct FilterRun {
    /// One-step-ahead prediction for each time step, made before seeing it.
    pub predictions: Vec<PredictedObs>,
    /// Predictive state used for each prediction.
    pub states: Vec<DVector<f64>>,
    /// Number of degenerate updates that reset the state.
    pub lost_track: usize,
}

impl PredictiveModel {
    /// The projection basis, or the identity on the raw future-feature
    /// space.
    pub fn basis(&self) -> Basis {
        match &self.spec.projection {
            Some(b) => b.clone(),
            None => Basis::identity(self.spec.raw_window_dim()),
        }
    }

    /// Materialized per-symbol operators for the discrete plugin.
    pub fn hmm_operators(&self) -> Result<HmmOperators> {
        match &self.plugin {
            PluginBinding::Hmm { b_inf } => hmm_operators_from_w(&self.w, &self.basis(), b_inf.clone()),
            PluginBinding::Gaussian { .. } => {
                Err(Error::Param("model is bound to the Gaussian plugin".into()))
            }
        }
    }

    fn check_state(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.w.ncols() {
            return Err(Error::Dim(format!(
                "state has dimension {} but the operator expects {}",
                q.len(),
                self.w.ncols()
            )));
        }
        Ok(())
    }
}

fn gaussian_extended(model: &PredictiveModel, q: &DVector<f64>) -> Result<GaussianBelief> {
    let p = &model.w * q;
    let (belief, _) = gaussian_extended_from_moments(&p)?;
    Ok(belief)
}

fn belief_is_finite(b: &GaussianBelief) -> bool {
    b.mean.iter().all(|v| v.is_finite()) && b.cov.iter().all(|v| v.is_finite())
}

fn predicted_obs_is_finite(p: &PredictedObs) -> bool {
    match p {
        PredictedObs::Distribution(d) => d.iter().all(|v| v.is_finite()),
        PredictedObs::Gaussian { mean, cov } => {
            mean.iter().all(|v| v.is_finite()) && cov.iter().all(|v| v.is_finite())
        }
    }
}

/// Advances the state by conditioning on the observed value. Degenerate
/// updates reset to the initial state; the flag reports that.
pub fn filter_step(model: &PredictiveModel, q: &DVector<f64>, o: &Observation) -> Result<(DVector<f64>, bool)> {
    model.check_state(q)?;
    match (&model.plugin, o) {
        (PluginBinding::Hmm { .. }, Observation::Symbol(x)) => {
            let ops = model.hmm_operators()?;
            match hmm_filter(&ops, q, *x, model.clamp_eps)? {
                Some(next) => Ok((next, false)),
                None => Ok((model.q1.clone(), true)),
            }
        }
        (PluginBinding::Gaussian { obs_dim }, Observation::Vector(v)) => {
            // A diverged moment vector overflows when the mean is squared
            // back into second moments; recover instead of propagating it.
            let belief = gaussian_extended(model, q)?;
            if !belief_is_finite(&belief) {
                return Ok((model.q1.clone(), true));
            }
            match gaussian_condition(&belief, *obs_dim, v) {
                Ok(cond) => {
                    let next = belief_to_state(&cond);
                    if next.iter().all(|x| x.is_finite()) {
                        Ok((next, false))
                    } else {
                        Ok((model.q1.clone(), true))
                    }
                }
                Err(Error::Numerical(_)) => Ok((model.q1.clone(), true)),
                Err(e) => Err(e),
            }
        }
        _ => Err(Error::Param("observation kind does not match the model plugin".into())),
    }
}

/// Advances the state without conditioning on the intervening observation.
pub fn predict_step(model: &PredictiveModel, q: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    model.check_state(q)?;
    match &model.plugin {
        PluginBinding::Hmm { .. } => {
            let ops = model.hmm_operators()?;
            match hmm_predict(&ops, q, model.clamp_eps)? {
                Some(next) => Ok((next, false)),
                None => Ok((model.q1.clone(), true)),
            }
        }
        PluginBinding::Gaussian { obs_dim } => {
            let belief = gaussian_extended(model, q)?;
            if !belief_is_finite(&belief) {
                return Ok((model.q1.clone(), true));
            }
            let marg = gaussian_marginalize(&belief, *obs_dim)?;
            Ok((belief_to_state(&marg), false))
        }
    }
}

/// One-step-ahead prediction of the next observation from a state.
pub fn predict_observation(model: &PredictiveModel, q: &DVector<f64>) -> Result<PredictedObs> {
    model.check_state(q)?;
    match &model.plugin {
        PluginBinding::Hmm { .. } => {
            let ops = model.hmm_operators()?;
            Ok(PredictedObs::Distribution(hmm_obs_distribution(&ops, q, model.clamp_eps)?))
        }
        PluginBinding::Gaussian { obs_dim } => {
            let belief = gaussian_extended(model, q)?;
            let mean = belief.mean.rows(0, *obs_dim).into_owned();
            let cov = belief.cov.view((0, 0), (*obs_dim, *obs_dim)).into_owned();
            Ok(PredictedObs::Gaussian { mean, cov })
        }
    }
}

/// Filters a whole sequence from the initial state, recording one-step-ahead
/// predictions, the states they were made from, and recovery events.
pub fn filter_sequence(model: &PredictiveModel, seq: &ObservationSeq) -> Result<FilterRun> {
    let cached_ops = match &model.plugin {
        PluginBinding::Hmm { .. } => Some(model.hmm_operators()?),
        PluginBinding::Gaussian { .. } => None,
    };
    let mut q = model.q1.clone();
    let mut predictions = Vec::with_capacity(seq.len());
    let mut states = Vec::with_capacity(seq.len());
    let mut lost_track = 0usize;
    for t in 0..seq.len() {
        states.push(q.clone());
        let (pred, next) = match (&cached_ops, seq.step(t)) {
            (Some(ops), Observation::Symbol(x)) => {
                let pred = PredictedObs::Distribution(hmm_obs_distribution(ops, &q, model.clamp_eps)?);
                let next = match hmm_filter(ops, &q, x, model.clamp_eps)? {
                    Some(next) => next,
                    None => {
                        lost_track += 1;
                        model.q1.clone()
                    }
                };
                (pred, next)
            }
            (None, o) => {
                let mut pred = predict_observation(model, &q)?;
                if !predicted_obs_is_finite(&pred) {
                    // recover before the prediction is recorded, so every
                    // emitted prediction is finite
                    lost_track += 1;
                    q = model.q1.clone();
                    *states.last_mut().expect("state pushed this step") = q.clone();
                    pred = predict_observation(model, &q)?;
                }
                let (next, lost) = filter_step(model, &q, &o)?;
                if lost {
                    lost_track += 1;
                }
                (pred, next)
            }
            (Some(_), Observation::Vector(_)) => {
                return Err(Error::Param("continuous observation fed to a discrete model".into()))
            }
        };
        predictions.push(pred);
        q = next;
    }
    Ok(FilterRun { predictions, states, lost_track })
}

/// Where the state-space basis comes from when training with a reduced rank.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum BasisSource {
    /// Left singular vectors of the fitted stage-1 future-feature weights.
    S1aWeights,
    /// Left singular vectors of the empirical future/history
    /// cross-covariance.
    CrossCovariance,
    /// Caller-supplied basis.
    Provided(Basis),
}

impl Default for BasisSource {
    fn default() -> Self {
        BasisSource::S1aWeights
    }
}

fn default_clamp_eps() -> f64 {
    1e-9
}

/// Training configuration for discrete-observation models.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteTrainConfig {
    pub features: FeatureSpec,
    pub regressors: RegressorSpec,
    /// State rank `m`; `None` keeps the full future-feature dimension.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub basis_source: BasisSource,
    /// Stage-2 ridge; `None` uses the scale-aware default.
    #[serde(default)]
    pub lambda_s2: Option<f64>,
    #[serde(default = "default_clamp_eps")]
    pub clamp_eps: f64,
}

impl DiscreteTrainConfig {
    pub fn new(features: FeatureSpec, regressors: RegressorSpec) -> Self {
        DiscreteTrainConfig {
            features,
            regressors,
            rank: None,
            basis_source: BasisSource::default(),
            lambda_s2: None,
            clamp_eps: default_clamp_eps(),
        }
    }
}

/// Applies the per-symbol block projection to extended-future rows.
fn project_extended(y: &DMatrix<f64>, basis: &Basis, n_symbols: usize) -> DMatrix<f64> {
    let d_raw = basis.ambient_dim();
    let m = basis.rank();
    let mut out = DMatrix::zeros(y.nrows(), n_symbols * m);
    for x in 0..n_symbols {
        let block = y.columns(x * d_raw, d_raw) * &basis.u;
        out.columns_mut(x * m, m).copy_from(&block);
    }
    out
}

/// Trains a discrete-observation model end to end: triplet extraction,
/// denoising, optional rank reduction, the stage-2 operator, the normalizer,
/// and the initial state.
pub fn train_discrete(seqs: &[ObservationSeq], config: &DiscreteTrainConfig) -> Result<PredictiveModel> {
    if !config.features.kind.is_discrete() {
        return Err(Error::Param("discrete training needs a discrete feature kind".into()));
    }
    let mut spec = config.features.clone();
    spec.projection = None;
    spec.validate()?;
    let n_symbols = spec.n_obs.expect("validated discrete spec");

    let data = extract_triplets(seqs, &spec)?;
    let (s1, x_raw, y_raw) = s1_denoise(&data, &config.regressors)?;

    let basis = match (&config.rank, &config.basis_source) {
        (None, _) => None,
        (Some(m), BasisSource::S1aWeights) => Some(learn_basis(&s1.reg_psi.weights, *m)?),
        (Some(m), BasisSource::CrossCovariance) => {
            let n = data.n() as f64;
            let cross = (data.psi.transpose() * &data.h).scale(1.0 / n);
            Some(learn_basis(&cross, *m)?)
        }
        (Some(m), BasisSource::Provided(b)) => {
            b.validate()?;
            if b.rank() != *m || b.ambient_dim() != spec.raw_window_dim() {
                return Err(Error::Dim(format!(
                    "provided basis is {}x{} but rank {m} over dimension {} was requested",
                    b.ambient_dim(),
                    b.rank(),
                    spec.raw_window_dim()
                )));
            }
            Some(b.clone())
        }
    };

    let (x_hat, y_hat) = match &basis {
        Some(b) => (&x_raw * &b.u, project_extended(&y_raw, b, n_symbols)),
        None => (x_raw, y_raw),
    };

    let lambda_s2 = config.lambda_s2.unwrap_or_else(|| default_s2_lambda(&x_hat));
    let w = s2_regress(&x_hat, &y_hat, lambda_s2)?;
    let b_inf = hmm_normalizer_from_states(&x_hat)?;

    let q1_raw = estimate_initial_state(&data);
    let q1 = match &basis {
        Some(b) => b.u.transpose() * q1_raw,
        None => q1_raw,
    };

    spec.projection = basis;
    Ok(PredictiveModel {
        w,
        q1,
        spec,
        plugin: PluginBinding::Hmm { b_inf },
        lambda_s2,
        clamp_eps: config.clamp_eps,
    })
}

/// Training configuration for the Gaussian moment pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianTrainConfig {
    pub obs_dim: usize,
    pub history_len: usize,
    pub future_len: usize,
    /// Ridge for the stage-1 window regressions.
    #[serde(default)]
    pub lambda_s1: f64,
    /// Stage-2 ridge; `None` uses a tiny scale-aware default so the linear
    /// operator tracks the moment manifold tightly.
    #[serde(default)]
    pub lambda_s2: Option<f64>,
    /// Optional projection rank for the future window.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default = "default_min_seq_len_cfg")]
    pub min_seq_len: usize,
}

fn default_min_seq_len_cfg() -> usize {
    5
}

impl GaussianTrainConfig {
    pub fn new(obs_dim: usize, history_len: usize, future_len: usize) -> Self {
        GaussianTrainConfig {
            obs_dim,
            history_len,
            future_len,
            lambda_s1: 0.0,
            lambda_s2: None,
            rank: None,
            min_seq_len: default_min_seq_len_cfg(),
        }
    }
}

/// Builds moment-stacked rows `[mu_t; vec(mu_t mu_t^T + R)]` from fitted
/// window means and a shared residual covariance.
fn stack_fitted_moments(means: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = means.nrows();
    let d = means.ncols();
    let mut out = DMatrix::zeros(n, d + d * d);
    for t in 0..n {
        let mu = means.row(t).transpose();
        let m2 = r + &mu * mu.transpose();
        out.view_mut((t, 0), (1, d)).copy_from(&mu.transpose());
        for i in 0..d {
            for j in 0..d {
                out[(t, d + i * d + j)] = m2[(i, j)];
            }
        }
    }
    out
}

/// Trains the Gaussian moment pipeline: linear window regressions with
/// residual covariances provide denoised first-plus-second moment rows, and
/// stage 2 fits the belief-update operator over them.
pub fn train_gaussian(seqs: &[ObservationSeq], config: &GaussianTrainConfig) -> Result<PredictiveModel> {
    let mut raw_spec = FeatureSpec::stacked_window(config.obs_dim, config.history_len, config.future_len);
    raw_spec.min_seq_len = config.min_seq_len;
    let data = extract_triplets(seqs, &raw_spec)?;

    let basis = match config.rank {
        None => None,
        Some(m) => {
            let pre = fit_linear(&data.h, &data.psi, config.lambda_s1)?;
            Some(learn_basis(&pre.weights, m)?)
        }
    };
    let (psi_windows, xi_windows) = match &basis {
        Some(b) => {
            let psi = &data.psi * &b.u;
            let mut xi = DMatrix::zeros(data.n(), config.obs_dim + b.rank());
            xi.columns_mut(0, config.obs_dim).copy_from(&data.xi.columns(0, config.obs_dim));
            let next = data.xi.columns(config.obs_dim, b.ambient_dim()) * &b.u;
            xi.columns_mut(config.obs_dim, b.rank()).copy_from(&next);
            (psi, xi)
        }
        None => (data.psi.clone(), data.xi.clone()),
    };

    let s1a = fit_linear(&data.h, &psi_windows, config.lambda_s1)?;
    let s1b = fit_linear(&data.h, &xi_windows, config.lambda_s1)?;
    let x_hat = stack_fitted_moments(&s1a.predict_rows(&data.h)?, &s1a.residual_cov);
    let y_hat = stack_fitted_moments(&s1b.predict_rows(&data.h)?, &s1b.residual_cov);

    let lambda_s2 = config
        .lambda_s2
        .unwrap_or_else(|| 1e-8 * x_hat.norm_squared() / x_hat.ncols().max(1) as f64);
    let w = s2_regress(&x_hat, &y_hat, lambda_s2)?;

    // initial state from raw moment-stacked windows at sequence starts
    let p = psi_windows.ncols();
    let mut q1 = DVector::zeros(p + p * p);
    let (rows, denom): (Vec<usize>, f64) = if data.seq_ranges.len() == 1 {
        ((0..data.n()).collect(), data.n() as f64)
    } else {
        (data.first_rows().collect(), data.seq_ranges.len() as f64)
    };
    for r in rows {
        q1 += moment_stack(&psi_windows.row(r).transpose());
    }
    q1 /= denom;

    let mut spec = FeatureSpec::moment_stacked_window(config.obs_dim, config.history_len, config.future_len);
    spec.min_seq_len = config.min_seq_len;
    spec.projection = basis;
    Ok(PredictiveModel {
        w,
        q1,
        spec,
        plugin: PluginBinding::Gaussian { obs_dim: config.obs_dim },
        lambda_s2,
        clamp_eps: default_clamp_eps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    use crate::seqdata::{sample_hmm, HmmParams};

    fn simple_hmm() -> HmmParams {
        HmmParams::new(
            DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.2, 0.7]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.15, 0.1, 0.85]),
            DVector::from_vec(vec![0.6, 0.4]),
        )
        .unwrap()
    }

    #[test]
    fn one_hot_denoising_averages_within_groups() {
        let mut spec = FeatureSpec::discrete_indicator(2);
        spec.min_seq_len = 3;
        let seqs = sample_hmm(&simple_hmm(), 40, 5, 2).unwrap();
        let data = extract_triplets(&seqs, &spec).unwrap();
        let (_, x_hat, _) = s1_denoise(&data, &RegressorSpec::ols()).unwrap();
        // group mean of psi among rows whose history is symbol 0
        let mut mean = DVector::zeros(2);
        let mut count = 0.0;
        for t in 0..data.n() {
            if data.h[(t, 0)] == 1.0 {
                mean += data.psi.row(t).transpose();
                count += 1.0;
            }
        }
        mean /= count;
        for t in 0..data.n() {
            if data.h[(t, 0)] == 1.0 {
                assert_abs_diff_eq!(x_hat.row(t).transpose(), mean, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn s2_single_row_reproduces_outer_product() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let y = DMatrix::from_row_slice(1, 3, &[0.3, 0.6, 0.1]);
        let w = s2_regress(&x, &y, 0.0).unwrap();
        let expect = DMatrix::from_row_slice(3, 2, &[0.3, 0.0, 0.6, 0.0, 0.1, 0.0]);
        assert_abs_diff_eq!(w, expect, epsilon = 1e-10);
    }

    #[test]
    fn s2_recovers_exact_linear_map() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 0.0, 1.1]);
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let y = &x * m.transpose();
        let w = s2_regress(&x, &y, 0.0).unwrap();
        assert_abs_diff_eq!(w, m, epsilon = 1e-8);
    }

    #[test]
    fn s2_norm_shrinks_with_lambda() {
        let seqs = sample_hmm(&simple_hmm(), 60, 10, 3).unwrap();
        let spec = FeatureSpec::discrete_indicator(2);
        let data = extract_triplets(&seqs, &spec).unwrap();
        let (_, x_hat, y_hat) = s1_denoise(&data, &RegressorSpec::ols()).unwrap();
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1.0, 10.0, 100.0] {
            let norm = s2_regress(&x_hat, &y_hat, lambda).unwrap().norm();
            assert!(norm <= last + 1e-12);
            last = norm;
        }
    }

    #[test]
    fn initial_state_is_simplex_vector_for_indicators() {
        let seqs = sample_hmm(&simple_hmm(), 20, 30, 4).unwrap();
        let spec = FeatureSpec::discrete_indicator(2);
        let data = extract_triplets(&seqs, &spec).unwrap();
        let q1 = estimate_initial_state(&data);
        assert!(q1.min() >= 0.0);
        assert_abs_diff_eq!(q1.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_sequence_initial_state_averages_all_rows() {
        let seqs = sample_hmm(&simple_hmm(), 50, 1, 5).unwrap();
        let spec = FeatureSpec::discrete_indicator(2);
        let data = extract_triplets(&seqs, &spec).unwrap();
        let q1 = estimate_initial_state(&data);
        let manual = data.psi.row_sum().transpose() / data.n() as f64;
        assert_abs_diff_eq!(q1, manual, epsilon = 1e-12);
    }

    #[test]
    fn trained_filter_stays_in_simplex() {
        let params = simple_hmm();
        let train = sample_hmm(&params, 40, 40, 6).unwrap();
        let config = DiscreteTrainConfig::new(FeatureSpec::discrete_indicator(2), RegressorSpec::ols());
        let model = train_discrete(&train, &config).unwrap();
        let test = sample_hmm(&params, 60, 1, 7).unwrap();
        let run = filter_sequence(&model, &test[0]).unwrap();
        assert_eq!(run.predictions.len(), 60);
        for (pred, state) in run.predictions.iter().zip(&run.states) {
            let d = pred.distribution().expect("discrete model");
            assert!(d.min() >= 0.0);
            assert_abs_diff_eq!(d.sum(), 1.0, epsilon = 1e-9);
            assert!(state.min() >= -1e-9);
        }
    }

    #[test]
    fn model_round_trips_through_json() {
        let train = sample_hmm(&simple_hmm(), 40, 20, 8).unwrap();
        let config = DiscreteTrainConfig::new(FeatureSpec::discrete_indicator(2), RegressorSpec::ols());
        let model = train_discrete(&train, &config).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: PredictiveModel = serde_json::from_str(&text).unwrap();
        assert_abs_diff_eq!(back.w, model.w, epsilon = 0.0);
        assert_abs_diff_eq!(back.q1, model.q1, epsilon = 0.0);
        let test = sample_hmm(&simple_hmm(), 30, 1, 9).unwrap();
        let a = filter_sequence(&model, &test[0]).unwrap();
        let b = filter_sequence(&back, &test[0]).unwrap();
        for (x, y) in a.predictions.iter().zip(&b.predictions) {
            assert_abs_diff_eq!(
                x.distribution().unwrap(),
                y.distribution().unwrap(),
                epsilon = 0.0
            );
        }
    }
}
