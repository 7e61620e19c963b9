//! Kernelized predictive-state models over Gram matrices.
//!
//! States are weight vectors over training atoms rather than explicit
//! feature vectors. Stage 1 denoises with a conditional-mean smoother on the
//! history Gram matrix, stage 2 composes the belief-update operator entirely
//! in weight space, and filtering conditions on observations with the kernel
//! Bayes rule. A delta kernel on discrete data reduces the whole machinery
//! to the finite-dimensional pipeline.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_triplets, FeatureSpec};
use crate::hmm::clamp_distribution;
use crate::linalg::median;
use crate::regress::fit_cme;
use crate::rng::seeded;
use crate::seqdata::{Observation, Observations, ObservationSeq};
use crate::serde_mat;

/// A positive-definite kernel on feature rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum KernelFn {
    /// Gaussian kernel; `None` bandwidth resolves by the median pairwise
    /// distance of the training rows.
    Rbf { bandwidth: Option<f64> },
    /// Exact-match indicator. On one-hot rows this coincides with the
    /// linear kernel.
    Delta,
}

impl KernelFn {
    /// Gaussian kernel with the bandwidth left to the median heuristic.
    pub fn rbf() -> Self {
        KernelFn::Rbf { bandwidth: None }
    }

    /// Evaluates the kernel on two rows. Panics if called on an unresolved
    /// bandwidth; resolve against training rows first.
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            KernelFn::Delta => {
                if u == v {
                    1.0
                } else {
                    0.0
                }
            }
            KernelFn::Rbf { bandwidth } => {
                let sigma = bandwidth.expect("bandwidth must be resolved before evaluation");
                let mut d2 = 0.0;
                for (a, b) in u.iter().zip(v) {
                    let diff = a - b;
                    d2 += diff * diff;
                }
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    /// Pins an unresolved bandwidth to the median pairwise distance of the
    /// given rows (subsampled for cost), falling back to 1 when the rows
    /// are all identical.
    pub fn resolve(&self, rows: &DMatrix<f64>) -> KernelFn {
        match self {
            KernelFn::Delta => KernelFn::Delta,
            KernelFn::Rbf { bandwidth: Some(s) } => KernelFn::Rbf { bandwidth: Some(*s) },
            KernelFn::Rbf { bandwidth: None } => {
                let n = rows.nrows();
                let stride = n.div_ceil(500).max(1);
                let picked: Vec<usize> = (0..n).step_by(stride).collect();
                let mut dists = Vec::with_capacity(picked.len() * (picked.len() - 1) / 2);
                for (a, &i) in picked.iter().enumerate() {
                    for &j in picked.iter().skip(a + 1) {
                        dists.push((rows.row(i) - rows.row(j)).norm());
                    }
                }
                let med = median(&dists).unwrap_or(0.0);
                let sigma = if med > 0.0 {
                    med
                } else {
                    warn!("median pairwise distance is zero; using bandwidth 1");
                    1.0
                };
                KernelFn::Rbf { bandwidth: Some(sigma) }
            }
        }
    }

    fn row_slice<'a>(m: &'a DMatrix<f64>, i: usize, buf: &'a mut Vec<f64>) -> &'a [f64] {
        buf.clear();
        buf.extend(m.row(i).iter());
        buf
    }

    /// Gram matrix with entry `(i, j) = k(a_i, b_j)`.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(a.nrows(), b.nrows());
        let mut ubuf = Vec::new();
        let mut vbuf = Vec::new();
        for i in 0..a.nrows() {
            Self::row_slice(a, i, &mut ubuf);
            for j in 0..b.nrows() {
                Self::row_slice(b, j, &mut vbuf);
                out[(i, j)] = self.eval(&ubuf, &vbuf);
            }
        }
        out
    }

    /// Kernel evaluations of one query row against every row of `a`.
    pub fn eval_against(&self, a: &DMatrix<f64>, query: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(a.nrows());
        let mut ubuf = Vec::new();
        let q: Vec<f64> = query.iter().copied().collect();
        for i in 0..a.nrows() {
            Self::row_slice(a, i, &mut ubuf);
            out[i] = self.eval(&ubuf, &q);
        }
        out
    }
}

fn default_max_atoms() -> usize {
    2000
}

fn default_lambda() -> f64 {
    1e-6
}

/// Training configuration for the kernelized model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelTrainConfig {
    pub features: FeatureSpec,
    pub kernel_h: KernelFn,
    pub kernel_psi: KernelFn,
    pub kernel_obs: KernelFn,
    /// Stage-1 smoother ridge, as a per-sample rate (scaled by the atom
    /// count internally).
    #[serde(default = "default_lambda")]
    pub lambda_s1: f64,
    /// Stage-2 ridge rate.
    #[serde(default = "default_lambda")]
    pub lambda_s2: f64,
    /// Kernel Bayes rule ridge rate.
    #[serde(default = "default_lambda")]
    pub lambda_kbr: f64,
    /// Training rows beyond this count are subsampled down to it.
    #[serde(default = "default_max_atoms")]
    pub max_atoms: usize,
    /// Seed for the subsampling draw.
    #[serde(default)]
    pub subsample_seed: u64,
}

impl KernelTrainConfig {
    pub fn new(features: FeatureSpec, kernel_h: KernelFn, kernel_psi: KernelFn, kernel_obs: KernelFn) -> Self {
        KernelTrainConfig {
            features,
            kernel_h,
            kernel_psi,
            kernel_obs,
            lambda_s1: default_lambda(),
            lambda_s2: default_lambda(),
            lambda_kbr: default_lambda(),
            max_atoms: default_max_atoms(),
            subsample_seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.features.validate()?;
        for (name, v) in [
            ("lambda_s1", self.lambda_s1),
            ("lambda_s2", self.lambda_s2),
            ("lambda_kbr", self.lambda_kbr),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Param(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_atoms == 0 {
            return Err(Error::Param("max_atoms must be at least 1".into()));
        }
        Ok(())
    }
}

/// A trained kernelized model. Filtering needs only Gram blocks between
/// training atoms plus the observation atoms for query-time kernel
/// evaluations; the history and future atoms themselves are not retained.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelModel {
    /// Observation kernel with its bandwidth pinned.
    pub kernel_obs: KernelFn,
    /// One row per atom: the observation emitted at the atom's time step.
    #[serde(with = "serde_mat::mat")]
    pub atoms_obs: DMatrix<f64>,
    /// Weight-space belief-update composition.
    #[serde(with = "serde_mat::mat")]
    pub propagator: DMatrix<f64>,
    /// Gram of future atoms against themselves.
    #[serde(with = "serde_mat::mat")]
    pub g_xx: DMatrix<f64>,
    /// Gram of future atoms against shifted-future atoms.
    #[serde(with = "serde_mat::mat")]
    pub g_x_xnext: DMatrix<f64>,
    /// Gram of observation atoms against themselves.
    #[serde(with = "serde_mat::mat")]
    pub g_oo: DMatrix<f64>,
    /// Initial weights over atoms.
    #[serde(with = "serde_mat::vec")]
    pub q1: DVector<f64>,
    /// Kernel Bayes rule ridge rate.
    pub lambda_kbr: f64,
    /// Symbol count for discrete observation models.
    pub n_obs: Option<usize>,
    /// Hot index of each atom's shifted future window (discrete models
    /// only). Under a delta kernel every read-out depends on weights only
    /// through these group sums, so the filter can floor the implied window
    /// distribution exactly like the indicator pipeline does.
    pub psi_next_groups: Option<Vec<usize>>,
    /// Probability floor for discrete predictive distributions.
    pub clamp_eps: f64,
    /// Atom count after any subsampling.
    pub n_atoms: usize,
    /// Extracted row count before subsampling.
    pub n_train: usize,
}

/// Weights over atoms. `shifted` records whether they index the
/// shifted-future atoms (after any update) or the original future atoms
/// (the initial state only).
#[derive(Clone, Debug)]
pub struct KernelState {
    pub weights: DVector<f64>,
    pub shifted: bool,
}

/// One-step-ahead observation prediction from a kernelized model.
#[derive(Clone, Debug)]
pub enum KernelPrediction {
    /// Probability vector over symbols.
    Distribution(DVector<f64>),
    /// Predicted mean observation vector.
    Mean(DVector<f64>),
}

impl KernelPrediction {
    pub fn distribution(&self) -> Option<&DVector<f64>> {
        match self {
            KernelPrediction::Distribution(d) => Some(d),
            KernelPrediction::Mean(_) => None,
        }
    }

    pub fn mean(&self) -> Option<&DVector<f64>> {
        match self {
            KernelPrediction::Mean(m) => Some(m),
            KernelPrediction::Distribution(_) => None,
        }
    }
}

/// Filtering pass over one sequence.
#[derive(Clone, Debug)]
pub struct KernelRun {
    pub predictions: Vec<KernelPrediction>,
    pub lost_track: usize,
}

fn obs_rows(obs: &Observations, indices: &[usize]) -> DMatrix<f64> {
    match obs {
        Observations::Discrete(symbols) => {
            DMatrix::from_iterator(indices.len(), 1, indices.iter().map(|&i| symbols[i] as f64))
        }
        Observations::Continuous(rows) => {
            let mut out = DMatrix::zeros(indices.len(), rows.ncols());
            for (r, &i) in indices.iter().enumerate() {
                out.row_mut(r).copy_from(&rows.row(i));
            }
            out
        }
    }
}

fn select_rows(m: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(indices.len(), m.ncols());
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).copy_from(&m.row(i));
    }
    out
}

fn obs_query_vector(o: &Observation) -> DVector<f64> {
    match o {
        Observation::Symbol(x) => DVector::from_element(1, *x as f64),
        Observation::Vector(v) => v.clone(),
    }
}

/// Trains a kernelized model: extracts triplets, optionally subsamples
/// atoms, denoises in weight space with the history-Gram smoother, and
/// precomposes the stage-2 update into a single atom-space propagator.
pub fn train_kernel(seqs: &[ObservationSeq], config: &KernelTrainConfig) -> Result<KernelModel> {
    config.validate()?;
    let data = extract_triplets(seqs, &config.features)?;
    let n_train = data.n();

    let first_rows: Vec<usize> = data.first_rows().collect();
    let indices: Vec<usize> = if n_train > config.max_atoms {
        let mut rng = seeded(config.subsample_seed);
        let mut picked = sample(&mut rng, n_train, config.max_atoms).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n_train).collect()
    };
    let n = indices.len();

    let h = select_rows(&data.h, &indices);
    let psi = select_rows(&data.psi, &indices);
    let psi_next = select_rows(&data.psi_next, &indices);
    let atoms_obs = obs_rows(&data.obs, &indices);

    let kernel_h = config.kernel_h.resolve(&h);
    let kernel_psi = config.kernel_psi.resolve(&psi);
    let kernel_obs = config.kernel_obs.resolve(&atoms_obs);

    let g_zz = kernel_h.gram(&h, &h);
    let g_xx = kernel_psi.gram(&psi, &psi);
    let g_x_xnext = kernel_psi.gram(&psi, &psi_next);
    let g_oo = kernel_obs.gram(&atoms_obs, &atoms_obs);

    // stage 1: weight-space smoother B = (G_zz + lambda n I)^-1 G_zz
    let b = fit_cme(&g_zz, config.lambda_s1 * n as f64)?;

    // stage 2 composed in weight space: propagator = B (B^T G_xx B + lambda n I)^-1 B^T
    let mut m = b.transpose() * &g_xx * &b;
    let lam2 = config.lambda_s2 * n as f64;
    for i in 0..n {
        m[(i, i)] += lam2;
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Numerical("stage-2 kernel system is not positive definite".into()))?;
    let propagator = &b * chol.solve(&b.transpose());

    // initial weights: uniform over surviving first-of-sequence atoms
    let mut q1 = DVector::zeros(n);
    let mut kept_firsts = 0usize;
    for (r, &i) in indices.iter().enumerate() {
        if first_rows.binary_search(&i).is_ok() {
            q1[r] = 1.0;
            kept_firsts += 1;
        }
    }
    if kept_firsts > 0 {
        q1 /= kept_firsts as f64;
    } else {
        warn!("subsampling dropped every first-of-sequence atom; starting from uniform weights");
        q1.fill(1.0 / n as f64);
    }

    let psi_next_groups = config.features.n_obs.map(|_| {
        (0..n)
            .map(|r| {
                let row = psi_next.row(r);
                (0..row.ncols()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0)
            })
            .collect()
    });

    Ok(KernelModel {
        kernel_obs,
        atoms_obs,
        propagator,
        g_xx,
        g_x_xnext,
        g_oo,
        q1,
        lambda_kbr: config.lambda_kbr,
        n_obs: config.features.n_obs,
        psi_next_groups,
        clamp_eps: 1e-9,
        n_atoms: n,
        n_train,
    })
}

impl KernelModel {
    /// Initial state.
    pub fn initial_state(&self) -> KernelState {
        KernelState { weights: self.q1.clone(), shifted: false }
    }

    fn check_state(&self, state: &KernelState) -> Result<()> {
        if state.weights.len() != self.n_atoms {
            return Err(Error::Dim(format!(
                "state carries {} weights but the model has {} atoms",
                state.weights.len(),
                self.n_atoms
            )));
        }
        Ok(())
    }

    /// Applies the belief-update operator, yielding normalized weights over
    /// the joint observation and shifted-future atoms.
    fn extended_weights(&self, state: &KernelState) -> Result<DVector<f64>> {
        self.check_state(state)?;
        let lifted = if state.shifted {
            &self.g_x_xnext * &state.weights
        } else {
            &self.g_xx * &state.weights
        };
        let mut c = &self.propagator * lifted;
        let s = c.sum();
        if s.abs() < 1e-12 || !s.is_finite() {
            return Err(Error::Numerical("extended weights lost normalization".into()));
        }
        c /= s;
        Ok(c)
    }

    /// Conditions joint weights on an observed value with the kernel Bayes
    /// rule, escalating the ridge when the linear system degenerates.
    fn kbr_condition(&self, c: &DVector<f64>, o: &Observation) -> Option<DVector<f64>> {
        let g_o = self.kernel_obs.eval_against(&self.atoms_obs, &obs_query_vector(o));
        let n = self.n_atoms;
        let d_g: DVector<f64> = c.component_mul(&g_o);
        // A = diag(c) G_oo
        let mut a = self.g_oo.clone();
        for i in 0..n {
            let mut row = a.row_mut(i);
            row *= c[i];
        }
        let a2 = &a * &a;
        let mut lambda = self.lambda_kbr * n as f64;
        for attempt in 0..4 {
            let mut lhs = a2.clone();
            for i in 0..n {
                lhs[(i, i)] += lambda;
            }
            if let Some(x) = lhs.lu().solve(&d_g) {
                let mut alpha = &a * x;
                let s = alpha.sum();
                if s.abs() >= 1e-12 && s.is_finite() && alpha.iter().all(|v| v.is_finite()) {
                    alpha /= s;
                    return Some(alpha);
                }
            }
            lambda *= 10.0;
            if attempt < 3 {
                warn!("kernel Bayes update degenerated; retrying with ridge {lambda:.3e}");
            }
        }
        None
    }

    fn weighted_obs_distribution(&self, weights: &DVector<f64>) -> Result<DVector<f64>> {
        let n_obs = self
            .n_obs
            .ok_or_else(|| Error::Param("observation distribution requires a discrete model".into()))?;
        let mut d = DVector::zeros(n_obs);
        for v in 0..n_obs {
            let g = self
                .kernel_obs
                .eval_against(&self.atoms_obs, &DVector::from_element(1, v as f64));
            d[v] = weights.dot(&g);
        }
        Ok(clamp_distribution(&d, self.clamp_eps))
    }

    fn weighted_obs_mean(&self, weights: &DVector<f64>) -> DVector<f64> {
        self.atoms_obs.transpose() * weights
    }

    /// One-step-ahead observation prediction from a state.
    pub fn predict_observation(&self, state: &KernelState) -> Result<KernelPrediction> {
        let c = self.extended_weights(state)?;
        match self.n_obs {
            Some(_) => Ok(KernelPrediction::Distribution(self.weighted_obs_distribution(&c)?)),
            None => Ok(KernelPrediction::Mean(self.weighted_obs_mean(&c))),
        }
    }

    /// Floors the implied shifted-window distribution at `clamp_eps` and
    /// renormalizes, expressed in weight space: group sums over atoms
    /// sharing a window value are the distribution entries, and a floored
    /// group's mass is spread uniformly over its atoms. A no-op for
    /// continuous models, where no distribution is implied.
    fn clamp_shifted(&self, mut w: DVector<f64>) -> DVector<f64> {
        let Some(groups) = &self.psi_next_groups else { return w };
        let eps = self.clamp_eps;
        if eps <= 0.0 {
            return w;
        }
        let n_groups = groups.iter().copied().max().map_or(0, |m| m + 1);
        let mut sums = vec![0.0f64; n_groups];
        let mut counts = vec![0usize; n_groups];
        for (i, &g) in groups.iter().enumerate() {
            sums[g] += w[i];
            counts[g] += 1;
        }
        let mut total = 0.0;
        for g in 0..n_groups {
            if counts[g] > 0 {
                total += sums[g].max(eps);
            }
        }
        for (i, &g) in groups.iter().enumerate() {
            if sums[g] >= eps {
                w[i] /= total;
            } else {
                w[i] = eps / (counts[g] as f64 * total);
            }
        }
        w
    }

    /// Conditions the state on an observed value. Degenerate updates reset
    /// to the initial state; the flag reports that.
    pub fn filter_step(&self, state: &KernelState, o: &Observation) -> Result<(KernelState, bool)> {
        let c = match self.extended_weights(state) {
            Ok(c) => c,
            Err(Error::Numerical(_)) => return Ok((self.initial_state(), true)),
            Err(e) => return Err(e),
        };
        match self.kbr_condition(&c, o) {
            Some(alpha) => Ok((KernelState { weights: self.clamp_shifted(alpha), shifted: true }, false)),
            None => Ok((self.initial_state(), true)),
        }
    }

    /// Advances the state one step without conditioning: the joint weights
    /// marginalize onto the shifted-future atoms unchanged.
    pub fn predict_step(&self, state: &KernelState) -> Result<(KernelState, bool)> {
        match self.extended_weights(state) {
            Ok(c) => Ok((KernelState { weights: self.clamp_shifted(c), shifted: true }, false)),
            Err(Error::Numerical(_)) => Ok((self.initial_state(), true)),
            Err(e) => Err(e),
        }
    }

    /// Filters a whole sequence, recording the prediction made before each
    /// observation and the number of degenerate updates.
    pub fn filter_sequence(&self, seq: &ObservationSeq) -> Result<KernelRun> {
        if self.n_obs.is_some() != seq.is_discrete() {
            return Err(Error::Param("observation kind does not match the model".into()));
        }
        let mut state = self.initial_state();
        let mut predictions = Vec::with_capacity(seq.len());
        let mut lost_track = 0usize;
        for t in 0..seq.len() {
            let c = match self.extended_weights(&state) {
                Ok(c) => c,
                Err(Error::Numerical(_)) => {
                    lost_track += 1;
                    state = self.initial_state();
                    self.extended_weights(&state)?
                }
                Err(e) => return Err(e),
            };
            let pred = match self.n_obs {
                Some(_) => KernelPrediction::Distribution(self.weighted_obs_distribution(&c)?),
                None => KernelPrediction::Mean(self.weighted_obs_mean(&c)),
            };
            predictions.push(pred);
            match self.kbr_condition(&c, &seq.step(t)) {
                Some(alpha) => state = KernelState { weights: self.clamp_shifted(alpha), shifted: true },
                None => {
                    lost_track += 1;
                    state = self.initial_state();
                }
            }
        }
        Ok(KernelRun { predictions, lost_track })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    use crate::seqdata::{sample_hmm, HmmParams};

    fn simple_hmm() -> HmmParams {
        HmmParams::new(
            DMatrix::from_row_slice(2, 2, &[0.85, 0.25, 0.15, 0.75]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]),
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap()
    }

    fn delta_config() -> KernelTrainConfig {
        let mut c = KernelTrainConfig::new(
            FeatureSpec::discrete_indicator(2),
            KernelFn::Delta,
            KernelFn::Delta,
            KernelFn::Delta,
        );
        c.lambda_s1 = 1e-10;
        c.lambda_s2 = 1e-8;
        c.lambda_kbr = 1e-10;
        c
    }

    #[test]
    fn delta_gram_marks_equal_rows() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let g = KernelFn::Delta.gram(&a, &a);
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(g, expect, epsilon = 0.0);
    }

    #[test]
    fn rbf_gram_matches_direct_formula() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 4.0]);
        let k = KernelFn::Rbf { bandwidth: Some(2.0) };
        let g = k.gram(&a, &a);
        assert_abs_diff_eq!(g[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(0, 1)], (-25.0f64 / 8.0).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 0)], g[(0, 1)], epsilon = 1e-15);
    }

    #[test]
    fn median_heuristic_resolves_and_falls_back() {
        let spread = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        match KernelFn::rbf().resolve(&spread) {
            KernelFn::Rbf { bandwidth: Some(s) } => assert!(s > 0.0 && s <= 3.0),
            other => panic!("unexpected kernel {other:?}"),
        }
        let constant = DMatrix::from_element(4, 1, 2.5);
        match KernelFn::rbf().resolve(&constant) {
            KernelFn::Rbf { bandwidth: Some(s) } => assert_abs_diff_eq!(s, 1.0, epsilon = 0.0),
            other => panic!("unexpected kernel {other:?}"),
        }
    }

    #[test]
    fn delta_model_filters_on_the_simplex() {
        let seqs = sample_hmm(&simple_hmm(), 30, 20, 11).unwrap();
        let model = train_kernel(&seqs, &delta_config()).unwrap();
        let test = sample_hmm(&simple_hmm(), 40, 1, 12).unwrap();
        let run = model.filter_sequence(&test[0]).unwrap();
        assert_eq!(run.predictions.len(), 40);
        assert_eq!(run.lost_track, 0);
        for p in &run.predictions {
            let d = p.distribution().expect("discrete model");
            assert!(d.min() >= 0.0);
            assert_abs_diff_eq!(d.sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn kbr_with_delta_kernel_restricts_and_renormalizes() {
        let seqs = sample_hmm(&simple_hmm(), 30, 20, 13).unwrap();
        let model = train_kernel(&seqs, &delta_config()).unwrap();
        let state = model.initial_state();
        let c = model.extended_weights(&state).unwrap();
        let (next, lost) = model.filter_step(&state, &Observation::Symbol(0)).unwrap();
        assert!(!lost);
        // conditioning restricts weights to atoms whose observation matches
        let mask_sum: f64 = (0..model.n_atoms).filter(|&s| model.atoms_obs[(s, 0)] == 0.0).map(|s| c[s]).sum();
        for s in 0..model.n_atoms {
            let expect = if model.atoms_obs[(s, 0)] == 0.0 { c[s] / mask_sum } else { 0.0 };
            assert_abs_diff_eq!(next.weights[s], expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn subsampling_is_capped_and_deterministic() {
        let seqs = sample_hmm(&simple_hmm(), 30, 20, 14).unwrap();
        let mut config = delta_config();
        config.max_atoms = 100;
        let a = train_kernel(&seqs, &config).unwrap();
        let b = train_kernel(&seqs, &config).unwrap();
        assert_eq!(a.n_atoms, 100);
        assert!(a.n_train > 100);
        assert_abs_diff_eq!(a.propagator, b.propagator, epsilon = 0.0);
        assert_abs_diff_eq!(a.q1, b.q1, epsilon = 0.0);
    }

    #[test]
    fn predict_step_skips_conditioning() {
        let seqs = sample_hmm(&simple_hmm(), 30, 20, 15).unwrap();
        let model = train_kernel(&seqs, &delta_config()).unwrap();
        let (state, lost) = model.predict_step(&model.initial_state()).unwrap();
        assert!(!lost);
        assert!(state.shifted);
        assert_abs_diff_eq!(state.weights.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn model_round_trips_through_json() {
        let seqs = sample_hmm(&simple_hmm(), 20, 10, 16).unwrap();
        let model = train_kernel(&seqs, &delta_config()).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: KernelModel = serde_json::from_str(&text).unwrap();
        let test = sample_hmm(&simple_hmm(), 25, 1, 17).unwrap();
        let a = model.filter_sequence(&test[0]).unwrap();
        let b = back.filter_sequence(&test[0]).unwrap();
        for (x, y) in a.predictions.iter().zip(&b.predictions) {
            assert_abs_diff_eq!(x.distribution().unwrap(), y.distribution().unwrap(), epsilon = 0.0);
        }
    }

    #[test]
    fn continuous_model_predicts_means() {
        use crate::seqdata::{sample_lds, LdsParams};
        let params = LdsParams::new(
            DMatrix::from_row_slice(1, 1, &[0.9]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[0.05]),
            DMatrix::from_row_slice(1, 1, &[0.05]),
            dvector![0.0],
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let seqs: Vec<_> = (0..10).map(|i| sample_lds(&params, 40, 18 + i).unwrap().0).collect();
        let mut config = KernelTrainConfig::new(
            FeatureSpec::stacked_window(1, 2, 1),
            KernelFn::rbf(),
            KernelFn::rbf(),
            KernelFn::rbf(),
        );
        config.lambda_s1 = 1e-3;
        config.lambda_s2 = 1e-3;
        config.lambda_kbr = 1e-3;
        let model = train_kernel(&seqs, &config).unwrap();
        let (test, _) = sample_lds(&params, 30, 99).unwrap();
        let run = model.filter_sequence(&test).unwrap();
        for p in &run.predictions {
            let m = p.mean().expect("continuous model");
            assert_eq!(m.len(), 1);
            assert!(m[0].is_finite());
        }
    }
}
