//! Computable finite-sample deviation bounds and Monte Carlo harnesses that
//! verify them.
//!
//! The bound formulas give high-probability operator-norm deviations for
//! empirical covariance and cross-covariance matrices of almost surely
//! bounded vectors, plus the error rate of a least-squares stage. The
//! harnesses check coverage of the covariance bound on samplers with known
//! population moments and trace how the trained pipeline's prediction error
//! responds to sample size and ridge strength.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::forward_predictive;
use crate::linalg::{median, op_norm_sym};
use crate::rng::substream;
use crate::seqdata::{sample_hmm, HmmParams, Observations};
use crate::twostage::{filter_sequence, train_discrete, DiscreteTrainConfig, PredictiveModel};

/// Population quantities entering the deviation bounds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Almost sure norm bound on the sampled vectors.
    pub c: f64,
    /// Top eigenvalue of the first covariance.
    pub lambda1_x: f64,
    /// Top eigenvalue of the second covariance.
    pub lambda1_y: f64,
    /// Trace of the first covariance.
    pub trace_x: f64,
    /// Trace of the second covariance.
    pub trace_y: f64,
    /// Operator norm of the population cross-covariance.
    pub norm_yx: f64,
    /// Sample count.
    pub n: usize,
    /// Failure probability.
    pub delta: f64,
}

impl BoundInputs {
    /// Inputs for a single-covariance bound; the second-moment fields are
    /// mirrored from the first.
    pub fn symmetric(c: f64, lambda1: f64, trace: f64, n: usize, delta: f64) -> Self {
        BoundInputs {
            c,
            lambda1_x: lambda1,
            lambda1_y: lambda1,
            trace_x: trace,
            trace_y: trace,
            norm_yx: lambda1,
            n,
            delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c", self.c),
            ("lambda1_x", self.lambda1_x),
            ("lambda1_y", self.lambda1_y),
            ("trace_x", self.trace_x),
            ("trace_y", self.trace_y),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Param(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.norm_yx >= 0.0) || !self.norm_yx.is_finite() {
            return Err(Error::Param(format!("norm_yx must be nonnegative, got {}", self.norm_yx)));
        }
        if self.n == 0 {
            return Err(Error::Param("sample count must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Param(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// A bound evaluation together with its intermediate constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundResult {
    pub value: f64,
    /// Named constants feeding the final expression.
    pub intermediates: BTreeMap<String, f64>,
}

fn bernstein_combine(r: f64, v: f64, k: f64, n: usize, delta: f64) -> (f64, f64) {
    let t = f64::max(2.6, 2.0 * (4.0 * k / (delta * v)).ln());
    let n = n as f64;
    ((2.0 * v * t / n).sqrt() + r * t / (3.0 * n), t)
}

fn bound_result(value: f64, r: f64, v: f64, k: f64, t: f64) -> BoundResult {
    let mut intermediates = BTreeMap::new();
    intermediates.insert("r".into(), r);
    intermediates.insert("v".into(), v);
    intermediates.insert("k".into(), k);
    intermediates.insert("t".into(), t);
    BoundResult { value, intermediates }
}

/// Operator-norm deviation bound for an empirical cross-covariance.
pub fn zeta_xy(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    let c2 = inputs.c * inputs.c;
    let r = c2 + inputs.norm_yx;
    let v = c2 * inputs.lambda1_x.max(inputs.lambda1_y) + inputs.norm_yx * inputs.norm_yx;
    let k = c2 * (inputs.trace_x + inputs.trace_y);
    let (value, t) = bernstein_combine(r, v, k, inputs.n, inputs.delta);
    Ok(bound_result(value, r, v, k, t))
}

/// Operator-norm deviation bound for an empirical covariance.
pub fn zeta_xx(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    let c2 = inputs.c * inputs.c;
    let r = c2 + inputs.lambda1_x;
    let v = c2 * inputs.lambda1_x + inputs.lambda1_x * inputs.lambda1_x;
    let k = c2 * inputs.trace_x;
    let (value, t) = bernstein_combine(r, v, k, inputs.n, inputs.delta);
    Ok(bound_result(value, r, v, k, t))
}

/// Error rate of a least-squares stage with `d_z` regressors and
/// `d_x + d_y` combined response dimensions; the leading constant is
/// caller-calibrated.
pub fn eta_ols(d_x: usize, d_y: usize, d_z: usize, n: usize, delta: f64, scale: f64) -> Result<BoundResult> {
    if d_x == 0 || d_y == 0 || d_z == 0 {
        return Err(Error::Param("dimensions must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::Param("sample count must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Param(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Param(format!("scale must be positive and finite, got {scale}")));
    }
    let rate = (d_z as f64 / n as f64).sqrt();
    let log_term = ((d_x + d_y) as f64 / delta).ln();
    let mut intermediates = BTreeMap::new();
    intermediates.insert("rate".into(), rate);
    intermediates.insert("log_term".into(), log_term);
    Ok(BoundResult { value: scale * rate * log_term, intermediates })
}

/// Samplers with known population covariance for the coverage harness.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "snake_case")]
pub enum CoverageSampler {
    /// Always emits the first basis vector; the empirical covariance is
    /// exact at every sample size.
    PointMass { dim: usize },
    /// Uniform over signed basis vectors, population covariance `I/d`.
    SignedBasis { dim: usize },
    /// Standard Gaussian; rejected because the bound needs almost surely
    /// bounded vectors.
    UnboundedGaussian { dim: usize },
}

impl CoverageSampler {
    pub fn dim(&self) -> usize {
        match *self {
            CoverageSampler::PointMass { dim }
            | CoverageSampler::SignedBasis { dim }
            | CoverageSampler::UnboundedGaussian { dim } => dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::Param("sampler dimension must be at least 1".into()));
        }
        if matches!(self, CoverageSampler::UnboundedGaussian { .. }) {
            return Err(Error::Param(
                "coverage checking needs an almost surely bounded sampler".into(),
            ));
        }
        Ok(())
    }

    /// Population covariance.
    pub fn population_cov(&self) -> DMatrix<f64> {
        let d = self.dim();
        match self {
            CoverageSampler::PointMass { .. } => {
                let mut m = DMatrix::zeros(d, d);
                m[(0, 0)] = 1.0;
                m
            }
            CoverageSampler::SignedBasis { .. } | CoverageSampler::UnboundedGaussian { .. } => {
                DMatrix::identity(d, d) / d as f64
            }
        }
    }

    /// Exact bound inputs for this sampler.
    pub fn bound_inputs(&self, n: usize, delta: f64) -> BoundInputs {
        match self {
            CoverageSampler::PointMass { .. } => BoundInputs::symmetric(1.0, 1.0, 1.0, n, delta),
            CoverageSampler::SignedBasis { dim } | CoverageSampler::UnboundedGaussian { dim } => {
                BoundInputs::symmetric(1.0, 1.0 / *dim as f64, 1.0, n, delta)
            }
        }
    }

    fn sample(&self, rng: &mut impl rand::Rng) -> DVector<f64> {
        let d = self.dim();
        let mut x = DVector::zeros(d);
        match self {
            CoverageSampler::PointMass { .. } => x[0] = 1.0,
            CoverageSampler::SignedBasis { .. } => {
                let pick = rng.random_range(0..2 * d);
                x[pick / 2] = if pick % 2 == 0 { 1.0 } else { -1.0 };
            }
            CoverageSampler::UnboundedGaussian { .. } => unreachable!("rejected by validate"),
        }
        x
    }
}

/// Outcome of a coverage run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub violations: usize,
    /// Fraction of trials whose empirical deviation met or exceeded the
    /// bound.
    pub rate: f64,
    /// Binomial standard error of the rate.
    pub std_err: f64,
    /// Nominal rate plus three standard errors; the rate should stay below
    /// it.
    pub threshold: f64,
    /// The bound the deviations were compared against.
    pub bound: f64,
}

impl CoverageReport {
    /// Whether the observed rate is consistent with the bound's confidence
    /// level.
    pub fn passed(&self) -> bool {
        self.rate <= self.threshold
    }
}

/// Monte Carlo coverage of the covariance bound: repeatedly draws `n`
/// vectors, measures the operator-norm deviation of the empirical
/// covariance, and counts how often it reaches the bound. The bound is
/// stated at confidence `1 - delta/2`, so the violation rate should stay
/// within binomial noise of `delta/2`.
pub fn check_cov_coverage(
    sampler: &CoverageSampler,
    n: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    sampler.validate()?;
    if trials == 0 {
        return Err(Error::Param("coverage needs at least one trial".into()));
    }
    let inputs = sampler.bound_inputs(n, delta);
    let bound = zeta_xx(&inputs)?.value;
    let truth = sampler.population_cov();
    let d = sampler.dim();
    let mut violations = 0usize;
    for trial in 0..trials {
        let mut rng = substream(seed, trial as u64);
        let mut sum = DMatrix::zeros(d, d);
        for _ in 0..n {
            let x = sampler.sample(&mut rng);
            sum += &x * x.transpose();
        }
        let deviation = op_norm_sym(&(sum / n as f64 - &truth), 1e-8);
        if deviation >= bound {
            violations += 1;
        }
    }
    let rate = violations as f64 / trials as f64;
    let std_err = (rate * (1.0 - rate) / trials as f64).sqrt();
    Ok(CoverageReport {
        trials,
        violations,
        rate,
        std_err,
        threshold: delta / 2.0 + 3.0 * std_err,
        bound,
    })
}

/// Configuration for tracing prediction error against sample size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Generating model.
    pub params: HmmParams,
    /// Training set sizes to sweep, counted in extracted triplets; the
    /// sampled sequence is longer by the window overhead.
    pub n_grid: Vec<usize>,
    /// One training replicate per seed at each size.
    pub seeds: Vec<u64>,
    /// Pipeline configuration applied at every cell.
    pub train: DiscreteTrainConfig,
    /// Length of the shared held-out sequence.
    pub eval_len: usize,
    /// Seed of the shared held-out sequence.
    pub eval_seed: u64,
}

/// One trained cell of the sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceCell {
    pub n: usize,
    pub seed: u64,
    /// Mean per-step L1 distance to the true predictive distribution, when
    /// training succeeded.
    pub error: Option<f64>,
    /// Training failure, recorded instead of aborting the sweep.
    pub failure: Option<String>,
}

/// Results of a sweep with per-size medians.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub cells: Vec<ConvergenceCell>,
}

impl ConvergenceTable {
    /// Median error over successful seeds at each sample size, in grid
    /// order.
    pub fn median_errors(&self, n_grid: &[usize]) -> Vec<(usize, Option<f64>)> {
        n_grid
            .iter()
            .map(|&n| {
                let errs: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.n == n)
                    .filter_map(|c| c.error)
                    .collect();
                (n, median(&errs))
            })
            .collect()
    }
}

/// Mean per-step L1 distance between the model's one-step-ahead
/// distributions and the true predictive distributions along a sequence.
pub fn predictive_l1_error(model: &PredictiveModel, params: &HmmParams, symbols: &[u32]) -> Result<f64> {
    if symbols.is_empty() {
        return Err(Error::Empty("evaluation sequence is empty".into()));
    }
    let truth = forward_predictive(params, symbols)?;
    let seq = crate::seqdata::ObservationSeq::discrete("eval", symbols.to_vec())?;
    let run = filter_sequence(model, &seq)?;
    let mut total = 0.0;
    for (t, pred) in run.predictions.iter().enumerate() {
        let d = pred
            .distribution()
            .ok_or_else(|| Error::Param("predictive error needs a discrete model".into()))?;
        if d.len() != truth[t].len() {
            return Err(Error::Dim(format!(
                "model predicts {} symbols but the generator has {}",
                d.len(),
                truth[t].len()
            )));
        }
        total += (d - &truth[t]).abs().sum();
    }
    Ok(total / symbols.len() as f64)
}

fn discrete_symbols(obs: &Observations) -> &[u32] {
    match obs {
        Observations::Discrete(v) => v,
        Observations::Continuous(_) => unreachable!("HMM sampling is discrete"),
    }
}

/// Trains the pipeline at every `(sample size, seed)` cell on a fresh
/// training sequence and scores it against the true predictive
/// distributions on one shared held-out sequence. Per-cell failures are
/// recorded, not fatal.
pub fn convergence_curve(config: &ConvergenceConfig) -> Result<ConvergenceTable> {
    config.params.validate()?;
    if config.n_grid.is_empty() || config.seeds.is_empty() {
        return Err(Error::Empty("convergence sweep needs sizes and seeds".into()));
    }
    if config.eval_len == 0 {
        return Err(Error::Param("eval_len must be at least 1".into()));
    }
    let eval = sample_hmm(&config.params, config.eval_len, 1, config.eval_seed)?;
    let eval_symbols = discrete_symbols(&eval[0].obs).to_vec();
    let overhead = config.train.features.history_len + config.train.features.future_len;
    let mut cells = Vec::with_capacity(config.n_grid.len() * config.seeds.len());
    for &n in &config.n_grid {
        for &seed in &config.seeds {
            let outcome = sample_hmm(&config.params, n + overhead, 1, seed)
                .and_then(|train| train_discrete(&train, &config.train))
                .and_then(|model| predictive_l1_error(&model, &config.params, &eval_symbols));
            let cell = match outcome {
                Ok(error) => ConvergenceCell { n, seed, error: Some(error), failure: None },
                Err(e) => ConvergenceCell { n, seed, error: None, failure: Some(e.to_string()) },
            };
            cells.push(cell);
        }
    }
    Ok(ConvergenceTable { cells })
}

/// One ridge setting of a sweep at fixed sample size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaCell {
    pub lambda: f64,
    /// Median held-out error over seeds, when any seed trained.
    pub median_error: Option<f64>,
}

/// Sweeps the stage-2 ridge at fixed sample size, holding data fixed per
/// seed, and reports the median held-out error per ridge value.
pub fn lambda_sweep(
    config: &ConvergenceConfig,
    n: usize,
    lambdas: &[f64],
) -> Result<Vec<LambdaCell>> {
    config.params.validate()?;
    if lambdas.is_empty() {
        return Err(Error::Empty("lambda sweep needs at least one ridge value".into()));
    }
    let eval = sample_hmm(&config.params, config.eval_len, 1, config.eval_seed)?;
    let eval_symbols = discrete_symbols(&eval[0].obs).to_vec();
    let overhead = config.train.features.history_len + config.train.features.future_len;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut errs = Vec::new();
        for &seed in &config.seeds {
            let mut train_cfg = config.train.clone();
            train_cfg.lambda_s2 = Some(lambda);
            let outcome = sample_hmm(&config.params, n + overhead, 1, seed)
                .and_then(|train| train_discrete(&train, &train_cfg))
                .and_then(|model| predictive_l1_error(&model, &config.params, &eval_symbols));
            if let Ok(e) = outcome {
                errs.push(e);
            }
        }
        out.push(LambdaCell { lambda, median_error: median(&errs) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use psrlearn_oracles::bounds::{cov_bound_reference, cross_bound_reference, ols_bound_reference};

    use crate::features::FeatureSpec;
    use crate::regress::RegressorSpec;

    fn log_branch_inputs() -> BoundInputs {
        BoundInputs {
            c: 1.0,
            lambda1_x: 1.0,
            lambda1_y: 1.0,
            trace_x: 2.0,
            trace_y: 2.0,
            norm_yx: 1.0,
            n: 1000,
            delta: 0.1,
        }
    }

    #[test]
    fn cross_bound_matches_reference_arithmetic() {
        let inputs = log_branch_inputs();
        let ours = zeta_xy(&inputs).unwrap();
        let reference = cross_bound_reference(1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 1000, 0.1);
        assert_abs_diff_eq!(ours.value, reference, epsilon = 1e-12);
        assert!(ours.intermediates["t"] > 2.6);
    }

    #[test]
    fn cov_bound_matches_reference_arithmetic() {
        let inputs = BoundInputs::symmetric(1.0, 1.0, 2.0, 1000, 0.1);
        let ours = zeta_xx(&inputs).unwrap();
        let reference = cov_bound_reference(1.0, 1.0, 2.0, 1000, 0.1);
        assert_abs_diff_eq!(ours.value, reference, epsilon = 1e-12);
    }

    #[test]
    fn ols_bound_matches_reference_arithmetic() {
        let ours = eta_ols(5, 5, 10, 1000, 0.1, 1.0).unwrap();
        let reference = ols_bound_reference(5, 5, 10, 1000, 0.1, 1.0);
        assert_abs_diff_eq!(ours.value, reference, epsilon = 1e-12);
    }

    #[test]
    fn small_tail_ratio_takes_the_constant_branch() {
        let mut inputs = log_branch_inputs();
        inputs.norm_yx = 3.0;
        inputs.delta = 0.5;
        let r = zeta_xy(&inputs).unwrap();
        assert_abs_diff_eq!(r.intermediates["t"], 2.6, epsilon = 0.0);
    }

    #[test]
    fn quadrupling_n_halves_the_sqrt_component() {
        let inputs = log_branch_inputs();
        let a = zeta_xy(&inputs).unwrap();
        let mut big = inputs;
        big.n = 4 * inputs.n;
        let b = zeta_xy(&big).unwrap();
        let (v, t, r) = (a.intermediates["v"], a.intermediates["t"], a.intermediates["r"]);
        let sqrt_a = (2.0 * v * t / inputs.n as f64).sqrt();
        let lin_a = r * t / (3.0 * inputs.n as f64);
        assert_abs_diff_eq!(a.value, sqrt_a + lin_a, epsilon = 1e-15);
        assert_abs_diff_eq!(b.value, sqrt_a / 2.0 + lin_a / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn bounds_shrink_with_n_and_grow_with_confidence() {
        let mut last = f64::INFINITY;
        for n in [100, 400, 1600, 6400] {
            let mut inputs = log_branch_inputs();
            inputs.n = n;
            let v = zeta_xx(&inputs).unwrap().value;
            assert!(v < last);
            last = v;
        }
        let mut last = 0.0;
        for delta in [0.5, 0.1, 0.02, 0.004] {
            let mut inputs = log_branch_inputs();
            inputs.delta = delta;
            let v = zeta_xx(&inputs).unwrap().value;
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn ols_bound_confidence_ratio_is_exact() {
        let base = eta_ols(5, 5, 10, 1000, 0.1, 1.0).unwrap().value;
        let tighter = eta_ols(5, 5, 10, 1000, 0.1 / std::f64::consts::E, 1.0).unwrap().value;
        let expect = (10.0 * std::f64::consts::E / 0.1).ln() / (10.0f64 / 0.1).ln();
        assert_abs_diff_eq!(tighter / base, expect, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_never_violates() {
        let report =
            check_cov_coverage(&CoverageSampler::PointMass { dim: 3 }, 50, 0.1, 50, 1).unwrap();
        assert_eq!(report.violations, 0);
        assert!(report.passed());
    }

    #[test]
    fn signed_basis_coverage_within_confidence() {
        let report =
            check_cov_coverage(&CoverageSampler::SignedBasis { dim: 3 }, 100, 0.1, 100, 2).unwrap();
        assert!(report.passed(), "rate {} over threshold {}", report.rate, report.threshold);
    }

    #[test]
    fn unbounded_sampler_is_rejected() {
        let err = check_cov_coverage(&CoverageSampler::UnboundedGaussian { dim: 3 }, 100, 0.1, 10, 3);
        assert!(matches!(err, Err(Error::Param(_))));
    }

    #[test]
    fn convergence_sweep_fills_every_cell() {
        let params = HmmParams::new(
            DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.2, 0.7]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.15, 0.1, 0.85]),
            DVector::from_vec(vec![0.6, 0.4]),
        )
        .unwrap();
        let config = ConvergenceConfig {
            params,
            n_grid: vec![200, 1000],
            seeds: vec![1, 2, 3],
            train: DiscreteTrainConfig::new(FeatureSpec::discrete_indicator(2), RegressorSpec::ols()),
            eval_len: 200,
            eval_seed: 99,
        };
        let table = convergence_curve(&config).unwrap();
        assert_eq!(table.cells.len(), 6);
        for cell in &table.cells {
            assert!(cell.error.is_some(), "cell failed: {:?}", cell.failure);
        }
        let medians = table.median_errors(&config.n_grid);
        assert!(medians.iter().all(|(_, m)| m.is_some()));
    }
}
