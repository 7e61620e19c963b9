//! Observation sequences, generating processes, and file round trips.

use crate::linalg;
use crate::rng;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

mod io;
pub use io::{load_json, read_sequences, save_json, write_sequences, write_sequences_with_comments};

/// Per-sequence observations. All steps of one sequence share a kind, and
/// continuous steps share a dimension (rows of the matrix are time steps).
#[derive(Clone, Debug, PartialEq)]
pub enum Observations {
    Discrete(Vec<u32>),
    Continuous(DMatrix<f64>),
}

/// A single observed trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSeq {
    pub id: String,
    pub obs: Observations,
}

/// One observation, as handed to the filtering loop.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    Symbol(u32),
    Vector(DVector<f64>),
}

impl ObservationSeq {
    pub fn discrete(id: impl Into<String>, symbols: Vec<u32>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Param("sequence must have at least one step".into()));
        }
        Ok(ObservationSeq { id: id.into(), obs: Observations::Discrete(symbols) })
    }

    pub fn continuous(id: impl Into<String>, rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::Param("sequence must have at least one step and one dimension".into()));
        }
        Ok(ObservationSeq { id: id.into(), obs: Observations::Continuous(rows) })
    }

    pub fn len(&self) -> usize {
        match &self.obs {
            Observations::Discrete(v) => v.len(),
            Observations::Continuous(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Observation at 0-based step `t`.
    pub fn step(&self, t: usize) -> Observation {
        match &self.obs {
            Observations::Discrete(v) => Observation::Symbol(v[t]),
            Observations::Continuous(m) => Observation::Vector(m.row(t).transpose()),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.obs, Observations::Discrete(_))
    }

    /// Dimension of continuous observations; `None` for discrete sequences.
    pub fn dim(&self) -> Option<usize> {
        match &self.obs {
            Observations::Discrete(_) => None,
            Observations::Continuous(m) => Some(m.ncols()),
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::Param(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

fn check_stochastic_columns(name: &str, m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        let mut sum = 0.0;
        for i in 0..m.nrows() {
            let p = m[(i, j)];
            if p < 0.0 || !p.is_finite() {
                return Err(Error::Param(format!("{name} entry ({i},{j}) = {p} is negative or non-finite")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Param(format!("{name} column {j} sums to {sum}, expected 1 within 1e-12")));
        }
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::Dim(format!("{name} must be {dim}x{dim}, got {}x{}", m.nrows(), m.ncols())));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-10 {
        return Err(Error::Param(format!("{name} is not symmetric (max asymmetry {asym})")));
    }
    let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
    if min_eig < -1e-10 {
        return Err(Error::Param(format!("{name} has negative eigenvalue {min_eig}")));
    }
    Ok(())
}

/// Hidden Markov model parameters.
///
/// `transition[(i, j)] = P(s' = i | s = j)` and `emission[(x, j)] = P(o = x | s = j)`
/// are column-stochastic; `initial` is the state distribution at the first step.
/// An observation is emitted from the current state before the state advances.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HmmParams {
    #[serde(with = "crate::serde_mat::mat")]
    pub transition: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::mat")]
    pub emission: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::vec")]
    pub initial: DVector<f64>,
}

impl HmmParams {
    pub fn new(transition: DMatrix<f64>, emission: DMatrix<f64>, initial: DVector<f64>) -> Result<Self> {
        let p = HmmParams { transition, emission, initial };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.transition.nrows();
        if self.transition.ncols() != m {
            return Err(Error::Dim("transition matrix must be square".into()));
        }
        if self.emission.ncols() != m {
            return Err(Error::Dim(format!(
                "emission has {} columns, expected one per state ({m})",
                self.emission.ncols()
            )));
        }
        if self.initial.len() != m {
            return Err(Error::Dim(format!("initial distribution has {} entries, expected {m}", self.initial.len())));
        }
        check_stochastic_columns("transition", &self.transition)?;
        check_stochastic_columns("emission", &self.emission)?;
        check_stochastic_columns("initial", &DMatrix::from_column_slice(m, 1, self.initial.as_slice()))?;
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.emission.nrows()
    }
}

/// Linear-Gaussian state space parameters: `s' = T s + nu`, `o = O s + eps`,
/// with `nu ~ N(0, state_noise)` and `eps ~ N(0, obs_noise)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LdsParams {
    #[serde(with = "crate::serde_mat::mat")]
    pub transition: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::mat")]
    pub observation: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::mat")]
    pub state_noise: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::mat")]
    pub obs_noise: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::vec")]
    pub init_mean: DVector<f64>,
    #[serde(with = "crate::serde_mat::mat")]
    pub init_cov: DMatrix<f64>,
}

impl LdsParams {
    pub fn new(
        transition: DMatrix<f64>,
        observation: DMatrix<f64>,
        state_noise: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let p = LdsParams { transition, observation, state_noise, obs_noise, init_mean, init_cov };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.transition.nrows();
        if self.transition.ncols() != n {
            return Err(Error::Dim("transition matrix must be square".into()));
        }
        if self.observation.ncols() != n {
            return Err(Error::Dim(format!(
                "observation matrix has {} columns, expected one per state ({n})",
                self.observation.ncols()
            )));
        }
        if self.init_mean.len() != n {
            return Err(Error::Dim(format!("init_mean has {} entries, expected {n}", self.init_mean.len())));
        }
        check_psd("state_noise", &self.state_noise, n)?;
        check_psd("obs_noise", &self.obs_noise, self.observation.nrows())?;
        check_psd("init_cov", &self.init_cov, n)?;
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.nrows()
    }

    /// Largest modulus among eigenvalues of the transition matrix.
    pub fn spectral_radius(&self) -> f64 {
        self.transition
            .clone()
            .complex_eigenvalues()
            .iter()
            .fold(0.0f64, |a, e| a.max(e.norm()))
    }
}

/// Knowledge tracing parameters: a two-state chain (unlearned 0, learned 1)
/// over binary responses (incorrect 0, correct 1).
///
/// Defaults follow common practice for the guess and slip rates (about 0.2
/// and 0.1); they are conventions, not fitted values.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct BktParams {
    pub p_init_learned: f64,
    pub p_learn: f64,
    pub p_forget: f64,
    pub p_guess: f64,
    pub p_slip: f64,
}

impl Default for BktParams {
    fn default() -> Self {
        BktParams { p_init_learned: 0.2, p_learn: 0.2, p_forget: 0.05, p_guess: 0.2, p_slip: 0.1 }
    }
}

impl BktParams {
    pub fn validate(&self) -> Result<()> {
        check_prob("p_init_learned", self.p_init_learned)?;
        check_prob("p_learn", self.p_learn)?;
        check_prob("p_forget", self.p_forget)?;
        check_prob("p_guess", self.p_guess)?;
        check_prob("p_slip", self.p_slip)
    }

    /// Expands the five scalars into explicit chain parameters.
    pub fn compile(&self) -> Result<HmmParams> {
        self.validate()?;
        let transition = DMatrix::from_column_slice(
            2,
            2,
            &[1.0 - self.p_learn, self.p_learn, self.p_forget, 1.0 - self.p_forget],
        );
        let emission = DMatrix::from_column_slice(
            2,
            2,
            &[1.0 - self.p_guess, self.p_guess, self.p_slip, 1.0 - self.p_slip],
        );
        let initial = DVector::from_column_slice(&[1.0 - self.p_init_learned, self.p_init_learned]);
        HmmParams::new(transition, emission, initial)
    }
}

fn draw_categorical(probs: impl Iterator<Item = f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples `n_seqs` sequences of equal length `len` from an HMM.
pub fn sample_hmm(params: &HmmParams, len: usize, n_seqs: usize, seed: u64) -> Result<Vec<ObservationSeq>> {
    sample_hmm_lengths(params, &vec![len; n_seqs], seed)
}

/// Random chain with strictly positive parameters.
///
/// Every column of the transition and emission matrices, and the initial
/// distribution, is an independent draw of normalized unit exponentials, so
/// all entries are positive and the chain is irreducible.
pub fn random_hmm(n_states: usize, n_obs: usize, seed: u64) -> Result<HmmParams> {
    if n_states == 0 || n_obs == 0 {
        return Err(Error::Param("chain needs at least one state and one symbol".into()));
    }
    let mut r = rng::seeded(seed);
    let draw_stochastic = |rows: usize, cols: usize, r: &mut ChaCha8Rng| {
        let mut m = DMatrix::from_fn(rows, cols, |_, _| {
            let e: f64 = rand_distr::Exp1.sample(r);
            e
        });
        for mut col in m.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        m
    };
    let transition = draw_stochastic(n_states, n_states, &mut r);
    let emission = draw_stochastic(n_obs, n_states, &mut r);
    let initial = draw_stochastic(n_states, 1, &mut r).column(0).into_owned();
    HmmParams::new(transition, emission, initial)
}

/// Samples one sequence per entry of `lengths` from an HMM.
pub fn sample_hmm_lengths(params: &HmmParams, lengths: &[usize], seed: u64) -> Result<Vec<ObservationSeq>> {
    params.validate()?;
    if lengths.iter().any(|&l| l == 0) {
        return Err(Error::Param("sequence lengths must be positive".into()));
    }
    let mut r = rng::seeded(seed);
    let m = params.n_states();
    let n = params.n_obs();
    let mut out = Vec::with_capacity(lengths.len());
    for (idx, &len) in lengths.iter().enumerate() {
        let mut state = draw_categorical(params.initial.iter().copied(), &mut r);
        let mut symbols = Vec::with_capacity(len);
        for _ in 0..len {
            let x = draw_categorical((0..n).map(|x| params.emission[(x, state)]), &mut r);
            symbols.push(x as u32);
            state = draw_categorical((0..m).map(|i| params.transition[(i, state)]), &mut r);
        }
        out.push(ObservationSeq::discrete(format!("seq{idx:05}"), symbols)?);
    }
    Ok(out)
}

/// Metadata attached to a generated linear-Gaussian sequence.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LdsSampleMeta {
    /// Set when the transition spectral radius is at least one while noise is
    /// present; the sequence is still generated but will not be stationary.
    pub unstable: bool,
}

fn gaussian_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    // symmetric square root with tiny negative eigenvalues clipped, so
    // semidefinite covariances are accepted
    let eig = ((cov + cov.transpose()).scale(0.5)).symmetric_eigen();
    let sqrt = DVector::from_fn(eig.eigenvalues.len(), |i, _| eig.eigenvalues[i].max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

fn draw_gaussian(mean: &DVector<f64>, factor: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + factor * z
}

/// Samples one sequence of length `len` from a linear-Gaussian model.
pub fn sample_lds(params: &LdsParams, len: usize, seed: u64) -> Result<(ObservationSeq, LdsSampleMeta)> {
    params.validate()?;
    if len == 0 {
        return Err(Error::Param("sequence length must be positive".into()));
    }
    let noisy = params.state_noise.abs().max() > 0.0 || params.obs_noise.abs().max() > 0.0;
    let unstable = params.spectral_radius() >= 1.0 && noisy;
    if unstable {
        log::warn!(
            "transition spectral radius {:.4} >= 1 with nonzero noise; generated sequence will drift",
            params.spectral_radius()
        );
    }
    let mut r = rng::seeded(seed);
    let state_factor = gaussian_factor(&params.state_noise);
    let obs_factor = gaussian_factor(&params.obs_noise);
    let init_factor = gaussian_factor(&params.init_cov);
    let zero_state = DVector::zeros(params.state_dim());
    let zero_obs = DVector::zeros(params.obs_dim());
    let mut state = draw_gaussian(&params.init_mean, &init_factor, &mut r);
    let mut rows = DMatrix::zeros(len, params.obs_dim());
    for t in 0..len {
        let o = &params.observation * &state + draw_gaussian(&zero_obs, &obs_factor, &mut r);
        rows.row_mut(t).copy_from(&o.transpose());
        state = &params.transition * state + draw_gaussian(&zero_state, &state_factor, &mut r);
    }
    Ok((ObservationSeq::continuous("seq00000", rows)?, LdsSampleMeta { unstable }))
}

/// Layout of a block-structured system: independent low-dimensional state
/// blocks, each observed through its own group of output rows, plus pure
/// white-noise output rows driven by no state at all.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SubsystemConfig {
    pub n_subsystems: usize,
    pub states_per_subsystem: usize,
    pub obs_rows_per_subsystem: usize,
    pub noise_rows: usize,
    pub spectral_radius: f64,
    pub state_noise: f64,
    pub obs_noise: f64,
}

impl Default for SubsystemConfig {
    fn default() -> Self {
        SubsystemConfig {
            n_subsystems: 2,
            states_per_subsystem: 5,
            obs_rows_per_subsystem: 10,
            noise_rows: 10,
            spectral_radius: 0.95,
            state_noise: 0.01,
            obs_noise: 1.0,
        }
    }
}

impl SubsystemConfig {
    pub fn state_dim(&self) -> usize {
        self.n_subsystems * self.states_per_subsystem
    }

    pub fn obs_dim(&self) -> usize {
        self.n_subsystems * self.obs_rows_per_subsystem + self.noise_rows
    }
}

/// Builds a block-structured linear-Gaussian model.
///
/// The transition matrix is block diagonal with each block rescaled to the
/// requested spectral radius; observation rows outside every block are zero,
/// so those outputs are white noise. The initial state is drawn from the
/// stationary covariance.
pub fn make_subsystem_lds(cfg: &SubsystemConfig, seed: u64) -> Result<LdsParams> {
    if cfg.n_subsystems == 0 || cfg.states_per_subsystem == 0 || cfg.obs_rows_per_subsystem == 0 {
        return Err(Error::Param("subsystem counts and dimensions must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.spectral_radius) {
        return Err(Error::Param(format!("spectral radius {} must be in [0, 1)", cfg.spectral_radius)));
    }
    if cfg.state_noise < 0.0 || cfg.obs_noise < 0.0 {
        return Err(Error::Param("noise variances must be nonnegative".into()));
    }
    let mut r = rng::seeded(seed);
    let n = cfg.state_dim();
    let d = cfg.obs_dim();
    let b = cfg.states_per_subsystem;
    let mut transition = DMatrix::zeros(n, n);
    let mut observation = DMatrix::zeros(d, n);
    for blk in 0..cfg.n_subsystems {
        let mut a = DMatrix::from_fn(b, b, |_, _| StandardNormal.sample(&mut r));
        let radius = a.clone().complex_eigenvalues().iter().fold(0.0f64, |acc, e| acc.max(e.norm()));
        if radius > 0.0 {
            a *= cfg.spectral_radius / radius;
        }
        transition.view_mut((blk * b, blk * b), (b, b)).copy_from(&a);
        let rows = cfg.obs_rows_per_subsystem;
        let c = DMatrix::from_fn(rows, b, |_, _| StandardNormal.sample(&mut r));
        observation.view_mut((blk * rows, blk * b), (rows, b)).copy_from(&c);
    }
    let state_noise = DMatrix::identity(n, n).scale(cfg.state_noise);
    let obs_noise = DMatrix::identity(d, d).scale(cfg.obs_noise);
    // stationary state covariance as the fixed point of X = T X T' + Q
    let mut init_cov = state_noise.clone();
    for _ in 0..4000 {
        let next = &transition * &init_cov * transition.transpose() + &state_noise;
        if (&next - &init_cov).abs().max() < 1e-14 {
            init_cov = next;
            break;
        }
        init_cov = next;
    }
    let (init_cov, _) = linalg::symmetrize_clip(&init_cov);
    LdsParams::new(transition, observation, state_noise, obs_noise, DVector::zeros(n), init_cov)
}
