//! Experiment configuration documents.
//!
//! Every experiment is driven by one JSON document tagged with an
//! `experiment` field. All numeric settings have defaults, so the minimal
//! config is just `{"experiment": "bkt"}`. The content hash of the
//! canonically re-serialized document is embedded in every output artifact,
//! which makes artifacts traceable to the exact settings that produced them.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use psrlearn::bounds::CoverageSampler;
use psrlearn::features::FeatureSpec;
use psrlearn::regress::RegressorSpec;
use psrlearn::seqdata::{BktParams, HmmParams, SubsystemConfig};
use psrlearn::twostage::DiscreteTrainConfig;

use crate::{CliError, CliResult};

/// One experiment run, dispatched on the `experiment` tag.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Bkt(BktConfig),
    LassoSubsystems(LassoConfig),
    Convergence(ConvergenceExpConfig),
    Bounds(BoundsExpConfig),
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        match self {
            ExperimentConfig::Bkt(c) => c.validate(),
            ExperimentConfig::LassoSubsystems(c) => c.validate(),
            ExperimentConfig::Convergence(c) => c.validate(),
            ExperimentConfig::Bounds(c) => c.validate(),
        }
    }

    pub fn output_dir(&self) -> Option<&PathBuf> {
        match self {
            ExperimentConfig::Bkt(c) => c.output_dir.as_ref(),
            ExperimentConfig::LassoSubsystems(c) => c.output_dir.as_ref(),
            ExperimentConfig::Convergence(c) => c.output_dir.as_ref(),
            ExperimentConfig::Bounds(c) => c.output_dir.as_ref(),
        }
    }
}

/// First 16 hex digits of the SHA-256 of the canonical serialization.
///
/// Hashing the re-serialized value rather than the input file makes the hash
/// independent of whitespace and key order in the user's document.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}

fn check(cond: bool, msg: &str) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}

/// Random split policy shared by the split-based experiments.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct SplitPolicy {
    pub n_train: usize,
    pub n_test: usize,
    pub n_splits: usize,
    pub seed: u64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy { n_train: 200, n_test: 125, n_splits: 200, seed: 0 }
    }
}

/// One model entry of a comparison experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Two-stage pipeline model.
    Spectral {
        name: String,
        features: FeatureSpec,
        regressors: RegressorSpec,
        #[serde(default)]
        rank: Option<usize>,
        #[serde(default)]
        lambda_s2: Option<f64>,
    },
    /// Likelihood baseline fit with expectation-maximization.
    Em { name: String, n_states: usize, n_iters: usize, n_restarts: usize },
}

impl ModelSpec {
    pub fn name(&self) -> &str {
        match self {
            ModelSpec::Spectral { name, .. } | ModelSpec::Em { name, .. } => name,
        }
    }

    fn validate(&self) -> CliResult<()> {
        match self {
            ModelSpec::Spectral { features, regressors, .. } => {
                features.validate().map_err(CliError::config)?;
                regressors.validate().map_err(CliError::config)?;
            }
            ModelSpec::Em { n_states, n_iters, n_restarts, .. } => {
                check(*n_states >= 1, "EM needs at least one state")?;
                check(*n_iters >= 1 && *n_restarts >= 1, "EM needs iterations and restarts")?;
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> Option<DiscreteTrainConfig> {
        match self {
            ModelSpec::Spectral { features, regressors, rank, lambda_s2, .. } => {
                let mut cfg = DiscreteTrainConfig::new(features.clone(), regressors.clone());
                cfg.rank = *rank;
                cfg.lambda_s2 = *lambda_s2;
                Some(cfg)
            }
            ModelSpec::Em { .. } => None,
        }
    }
}

/// The default four-model comparison over binary response sequences.
pub fn default_bkt_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::Spectral {
            name: "spec_hmm".into(),
            features: FeatureSpec::discrete_indicator(2),
            regressors: RegressorSpec::ols(),
            rank: None,
            lambda_s2: Some(0.0),
        },
        ModelSpec::Spectral {
            name: "feat_hmm".into(),
            features: FeatureSpec::discrete_joint_history(2, 4),
            regressors: RegressorSpec::ols(),
            rank: None,
            lambda_s2: Some(0.0),
        },
        ModelSpec::Spectral {
            name: "lr_hmm".into(),
            features: FeatureSpec::binary_history(4),
            regressors: RegressorSpec::logistic(),
            rank: None,
            lambda_s2: None,
        },
        ModelSpec::Em { name: "em".into(), n_states: 2, n_iters: 40, n_restarts: 2 },
    ]
}

fn default_n_seqs() -> usize {
    325
}

fn default_len_range() -> (usize, usize) {
    (5, 50)
}

fn default_warmup() -> usize {
    4
}

/// Knowledge-tracing comparison: several models trained and scored on random
/// splits of one synthetic pool of binary response sequences.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BktConfig {
    /// Generating chain, compiled from the five-scalar parameterization.
    #[serde(default)]
    pub bkt: BktParams,
    /// Pool size.
    #[serde(default = "default_n_seqs")]
    pub n_seqs: usize,
    /// Inclusive sequence length range, drawn uniformly.
    #[serde(default = "default_len_range")]
    pub len_range: (usize, usize),
    /// Seed of the generated pool.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub split: SplitPolicy,
    #[serde(default = "default_bkt_models")]
    pub models: Vec<ModelSpec>,
    /// Steps at the head of each test sequence excluded from scoring, the
    /// same for every model.
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Also report root-mean-square error columns.
    #[serde(default)]
    pub include_rmse: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for BktConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl BktConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.bkt.validate().map_err(CliError::config)?;
        check(!self.models.is_empty(), "model list must be nonempty")?;
        check(self.split.n_splits >= 1, "need at least one split")?;
        check(self.split.n_train >= 1 && self.split.n_test >= 1, "folds must be nonempty")?;
        check(
            self.split.n_train + self.split.n_test <= self.n_seqs,
            "train plus test fold exceeds the pool",
        )?;
        check(
            self.len_range.0 >= 1 && self.len_range.0 <= self.len_range.1,
            "length range must be an ordered positive pair",
        )?;
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name()).collect();
        names.sort_unstable();
        names.dedup();
        check(names.len() == self.models.len(), "model names must be distinct")?;
        for m in &self.models {
            m.validate()?;
        }
        Ok(())
    }
}

fn default_train_len() -> usize {
    1002
}

fn default_lasso_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_lasso_alpha() -> f64 {
    0.05
}

fn default_top_k() -> usize {
    10
}

/// Subsystem-discovery experiment: compares the state bases recovered by a
/// sparse stage-1 regression and by a plain cross-covariance decomposition
/// on block-structured linear system data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LassoConfig {
    #[serde(default)]
    pub system: SubsystemConfig,
    /// Generated sequence length; the usable pair count is two less.
    #[serde(default = "default_train_len")]
    pub train_len: usize,
    /// One system and dataset per seed.
    #[serde(default = "default_lasso_seeds")]
    pub seeds: Vec<u64>,
    /// L1 penalty of the sparse regression.
    #[serde(default = "default_lasso_alpha")]
    pub alpha: f64,
    /// Number of leading basis vectors kept from each decomposition.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for LassoConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl LassoConfig {
    pub fn validate(&self) -> CliResult<()> {
        check(!self.seeds.is_empty(), "need at least one seed")?;
        check(self.train_len >= 3, "sequence too short for history/future pairs")?;
        check(self.alpha >= 0.0, "penalty must be nonnegative")?;
        let d = self.system.obs_dim();
        check(
            self.top_k >= 1 && self.top_k <= d,
            "basis size must be between 1 and the observation dimension",
        )?;
        Ok(())
    }
}

/// Generator settings for a random chain, used when explicit parameters are
/// not supplied.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RandomHmmSpec {
    pub n_states: usize,
    pub n_obs: usize,
    pub seed: u64,
}

impl Default for RandomHmmSpec {
    fn default() -> Self {
        RandomHmmSpec { n_states: 3, n_obs: 4, seed: 0 }
    }
}

fn default_n_grid() -> Vec<usize> {
    vec![500, 2000, 8000]
}

fn default_conv_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_eval_len() -> usize {
    500
}

/// Error-versus-sample-size sweep of the discrete pipeline on a known chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceExpConfig {
    /// Explicit generating chain; drawn from `generator` when absent.
    #[serde(default)]
    pub params: Option<HmmParams>,
    #[serde(default)]
    pub generator: RandomHmmSpec,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_conv_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_len")]
    pub eval_len: usize,
    #[serde(default)]
    pub eval_seed: u64,
    /// Pipeline settings; defaults to the indicator-feature path at the
    /// generator's state rank.
    #[serde(default)]
    pub train: Option<DiscreteTrainConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ConvergenceExpConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl ConvergenceExpConfig {
    pub fn validate(&self) -> CliResult<()> {
        check(!self.n_grid.is_empty(), "need at least one sample size")?;
        check(!self.seeds.is_empty(), "need at least one seed")?;
        check(self.eval_len >= 1, "evaluation length must be positive")?;
        if let Some(p) = &self.params {
            p.validate().map_err(CliError::config)?;
        } else {
            check(
                self.generator.n_states >= 1 && self.generator.n_obs >= 2,
                "generator needs at least one state and two symbols",
            )?;
        }
        if let Some(t) = &self.train {
            t.features.validate().map_err(CliError::config)?;
        }
        Ok(())
    }
}

fn default_bounds_samplers() -> Vec<CoverageSampler> {
    vec![CoverageSampler::PointMass { dim: 4 }, CoverageSampler::SignedBasis { dim: 4 }]
}

fn default_bounds_ns() -> Vec<usize> {
    vec![100, 1000]
}

fn default_delta() -> f64 {
    0.1
}

fn default_trials() -> usize {
    500
}

/// Monte Carlo coverage grid for the covariance concentration bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsExpConfig {
    #[serde(default = "default_bounds_samplers")]
    pub samplers: Vec<CoverageSampler>,
    #[serde(default = "default_bounds_ns")]
    pub ns: Vec<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for BoundsExpConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl BoundsExpConfig {
    pub fn validate(&self) -> CliResult<()> {
        check(!self.samplers.is_empty() && !self.ns.is_empty(), "need samplers and sample sizes")?;
        check(self.delta > 0.0 && self.delta < 1.0, "confidence level must be in (0, 1)")?;
        check(self.trials >= 1, "need at least one trial")?;
        Ok(())
    }
}
