//! Discrete filtering plugin: per-symbol observable operators with a learned
//! normalizer, plus an exact forward recursion and a Baum-Welch baseline.
//!
//! A trained operator model holds one matrix per symbol (the row blocks of
//! the stage-2 operator), a normalizer functional `b_inf`, and the basis `U`
//! mapping internal states to distributions over future observation windows.
//! Filtering applies the observed symbol's operator and renormalizes;
//! clamping happens in distribution space so reduced-rank states stay valid.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Basis;
use crate::linalg::{pinv, PINV_RTOL};
use crate::rng::substream;
use crate::seqdata::HmmParams;
use crate::serde_mat;

/// Per-symbol operators with their normalizer and state basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HmmOperators {
    /// One `m x m` operator per symbol.
    #[serde(with = "serde_mat::mat_list")]
    pub b: Vec<DMatrix<f64>>,
    /// Normalizer functional: `b_inf^T q` is the probability-mass scale of a
    /// state.
    #[serde(with = "serde_mat::vec")]
    pub b_inf: DVector<f64>,
    /// Basis from internal states to future-window distributions.
    pub u: Basis,
}

impl HmmOperators {
    /// Number of symbols.
    pub fn n_symbols(&self) -> usize {
        self.b.len()
    }

    /// Internal state dimension.
    pub fn state_dim(&self) -> usize {
        self.b_inf.len()
    }
}

/// Splits a stage-2 operator into per-symbol row blocks.
///
/// `w` must have `n_symbols * m` rows and `m` columns, the `x`-th block of
/// `m` rows forming the operator applied when symbol `x` is observed.
pub fn hmm_operators_from_w(w: &DMatrix<f64>, u: &Basis, b_inf: DVector<f64>) -> Result<HmmOperators> {
    let m = w.ncols();
    if m == 0 || w.nrows() == 0 || w.nrows() % m != 0 {
        return Err(Error::Dim(format!(
            "operator matrix of size {}x{} does not split into square symbol blocks",
            w.nrows(),
            m
        )));
    }
    if b_inf.len() != m {
        return Err(Error::Dim(format!("normalizer has length {} but states have dimension {m}", b_inf.len())));
    }
    if u.rank() != m {
        return Err(Error::Dim(format!("basis rank {} does not match state dimension {m}", u.rank())));
    }
    let n = w.nrows() / m;
    let b = (0..n).map(|x| w.rows(x * m, m).into_owned()).collect();
    Ok(HmmOperators { b, b_inf, u: u.clone() })
}

/// Closed-form normalizer from a linear one-hot-history denoising fit.
///
/// `w_s1a` maps one-hot history features to future-window features, and
/// `p_h` is the empirical distribution over history values. The returned
/// `b_inf` solves the normalization condition `b_inf^T U^T v_z = 1` for all
/// observed history values `z` (least-norm solution via pseudo-inverse when
/// the system is rank deficient, with a warning).
pub fn hmm_normalizer(w_s1a: &DMatrix<f64>, u: &Basis, p_h: &DVector<f64>) -> Result<DVector<f64>> {
    if w_s1a.ncols() != p_h.len() {
        return Err(Error::Dim(format!(
            "denoiser has {} history columns but the marginal has {}",
            w_s1a.ncols(),
            p_h.len()
        )));
    }
    if u.ambient_dim() != w_s1a.nrows() {
        return Err(Error::Dim(format!(
            "basis ambient dimension {} does not match denoiser output dimension {}",
            u.ambient_dim(),
            w_s1a.nrows()
        )));
    }
    // column z of (U^T w_s1a diag(p_h)) is p_h(z) times the denoised state for z
    let m = u.u.transpose() * w_s1a * DMatrix::from_diagonal(p_h);
    let rank = m.clone().svd(false, false).rank(1e-10 * m.amax().max(1e-300));
    if rank < u.rank() {
        log::warn!("normalizer system has numerical rank {rank} < {}; using least-norm solution", u.rank());
    }
    Ok(pinv(&m.transpose(), 1e-10) * p_h)
}

/// Normalizer fitted directly to denoised states: least squares solution of
/// `states * b_inf = 1`.
pub fn hmm_normalizer_from_states(states: &DMatrix<f64>) -> Result<DVector<f64>> {
    if states.nrows() == 0 {
        return Err(Error::Empty("normalizer fit needs at least one state".into()));
    }
    // truncated least squares on the states directly keeps the condition
    // number unsquared
    Ok(pinv(states, PINV_RTOL) * DVector::from_element(states.nrows(), 1.0))
}

/// Clamps a distribution below `eps` and renormalizes it to unit sum.
pub fn clamp_distribution(dist: &DVector<f64>, eps: f64) -> DVector<f64> {
    let clamped = dist.map(|v| v.max(eps));
    let total = clamped.sum();
    clamped / total
}

/// Maps a state to future-window distribution space, clamps, renormalizes,
/// and maps back.
fn clamp_state(ops: &HmmOperators, q: &DVector<f64>, eps: f64) -> DVector<f64> {
    let dist = &ops.u.u * q;
    let fixed = clamp_distribution(&dist, eps);
    ops.u.u.transpose() * fixed
}

fn check_state(ops: &HmmOperators, q: &DVector<f64>) -> Result<()> {
    if q.len() != ops.state_dim() {
        return Err(Error::Dim(format!(
            "state has dimension {} but operators expect {}",
            q.len(),
            ops.state_dim()
        )));
    }
    Ok(())
}

/// One filtering update: applies the observed symbol's operator and
/// renormalizes.
///
/// Returns `None` when the normalizer is degenerate (magnitude below 1e-12),
/// signaling that the caller should re-initialize the state.
pub fn hmm_filter(ops: &HmmOperators, q: &DVector<f64>, x: u32, eps: f64) -> Result<Option<DVector<f64>>> {
    check_state(ops, q)?;
    let xi = x as usize;
    if xi >= ops.n_symbols() {
        return Err(Error::Param(format!("symbol {x} outside alphabet of size {}", ops.n_symbols())));
    }
    let num = &ops.b[xi] * q;
    let den = ops.b_inf.dot(&num);
    if den.abs() < 1e-12 {
        return Ok(None);
    }
    Ok(Some(clamp_state(ops, &(num / den), eps)))
}

/// One prediction update: advances the state without conditioning on the
/// intervening observation (sums the per-symbol operators).
pub fn hmm_predict(ops: &HmmOperators, q: &DVector<f64>, eps: f64) -> Result<Option<DVector<f64>>> {
    check_state(ops, q)?;
    let mut num = DVector::zeros(ops.state_dim());
    for b in &ops.b {
        num += b * q;
    }
    let den = ops.b_inf.dot(&num);
    if den.abs() < 1e-12 {
        return Ok(None);
    }
    Ok(Some(clamp_state(ops, &(num / den), eps)))
}

/// Distribution of the next observation implied by a state: entry `x` is the
/// normalizer applied to `B_x q`, clamped and renormalized.
pub fn hmm_obs_distribution(ops: &HmmOperators, q: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
    check_state(ops, q)?;
    let raw = DVector::from_fn(ops.n_symbols(), |x, _| ops.b_inf.dot(&(&ops.b[x] * q)));
    Ok(clamp_distribution(&raw, eps))
}

/// One-step predictive distributions of an exact parameterized model:
/// element `t` is the distribution of observation `t` given the previous
/// ones, starting with the marginal of the first step.
pub fn forward_predictive(params: &HmmParams, symbols: &[u32]) -> Result<Vec<DVector<f64>>> {
    params.validate()?;
    let n = params.n_obs();
    let mut belief = params.initial.clone();
    let mut out = Vec::with_capacity(symbols.len());
    for &s in symbols {
        if s as usize >= n {
            return Err(Error::Param(format!("symbol {s} outside alphabet of size {n}")));
        }
        out.push(&params.emission * &belief);
        // condition the state belief on the observed symbol, then advance
        let mut post = belief.clone();
        for i in 0..post.len() {
            post[i] *= params.emission[(s as usize, i)];
        }
        let z = post.sum();
        if z <= 0.0 {
            return Err(Error::Numerical("observation has zero probability under the model".into()));
        }
        belief = &params.transition * (post / z);
    }
    Ok(out)
}

/// Log-likelihood of a symbol sequence under exact parameters.
pub fn log_likelihood(params: &HmmParams, symbols: &[u32]) -> Result<f64> {
    let preds = forward_predictive(params, symbols)?;
    let mut ll = 0.0;
    for (t, &s) in symbols.iter().enumerate() {
        let p = preds[t][s as usize];
        if p <= 0.0 {
            return Err(Error::Numerical("observation has zero probability under the model".into()));
        }
        ll += p.ln();
    }
    Ok(ll)
}

/// Result of a Baum-Welch fit.
#[derive(Clone, Debug)]
pub struct EmReport {
    pub params: HmmParams,
    /// Final training log-likelihood of the best restart.
    pub loglik: f64,
    /// Per-iteration log-likelihood of the best restart (nondecreasing).
    pub loglik_trace: Vec<f64>,
    /// Final log-likelihood of every restart.
    pub restart_logliks: Vec<f64>,
}

fn random_stochastic(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, |_, _| {
        let e: f64 = Exp1.sample(rng);
        e
    });
    for mut col in m.column_iter_mut() {
        let s = col.sum();
        col /= s;
    }
    m
}

struct EmStats {
    trans_num: DMatrix<f64>,
    state_occ: DVector<f64>,
    emit_num: DMatrix<f64>,
    init_sum: DVector<f64>,
    n_seqs: f64,
    loglik: f64,
}

/// Scaled forward-backward pass for one sequence, accumulating sufficient
/// statistics into `stats`.
fn em_accumulate(params: &HmmParams, symbols: &[u32], stats: &mut EmStats) {
    let m = params.n_states();
    let len = symbols.len();
    let t_mat = &params.transition;
    let o_mat = &params.emission;

    // forward with per-step normalization
    let mut alphas = Vec::with_capacity(len);
    let mut scales = Vec::with_capacity(len);
    let mut alpha = DVector::from_fn(m, |i, _| params.initial[i] * o_mat[(symbols[0] as usize, i)]);
    let mut c = alpha.sum().max(1e-300);
    alpha /= c;
    alphas.push(alpha.clone());
    scales.push(c);
    for t in 1..len {
        let mut next = t_mat * &alpha;
        for i in 0..m {
            next[i] *= o_mat[(symbols[t] as usize, i)];
        }
        c = next.sum().max(1e-300);
        next /= c;
        alpha = next;
        alphas.push(alpha.clone());
        scales.push(c);
    }
    stats.loglik += scales.iter().map(|s| s.ln()).sum::<f64>();

    // backward with the same scaling constants
    let mut beta = DVector::from_element(m, 1.0);
    let mut betas = vec![DVector::zeros(m); len];
    betas[len - 1] = beta.clone();
    for t in (0..len - 1).rev() {
        let mut ob = beta.clone();
        for j in 0..m {
            ob[j] *= o_mat[(symbols[t + 1] as usize, j)];
        }
        beta = t_mat.transpose() * ob / scales[t + 1];
        betas[t] = beta.clone();
    }

    for t in 0..len {
        let gamma = DVector::from_fn(m, |i, _| alphas[t][i] * betas[t][i]);
        let x = symbols[t] as usize;
        for i in 0..m {
            stats.emit_num[(x, i)] += gamma[i];
        }
        if t == 0 {
            stats.init_sum += &gamma;
        }
        if t < len - 1 {
            stats.state_occ += &gamma;
            let x_next = symbols[t + 1] as usize;
            for i in 0..m {
                for j in 0..m {
                    stats.trans_num[(j, i)] += alphas[t][i]
                        * t_mat[(j, i)]
                        * o_mat[(x_next, j)]
                        * betas[t + 1][j]
                        / scales[t + 1];
                }
            }
        }
    }
    stats.n_seqs += 1.0;
}

/// Baum-Welch with random restarts.
///
/// Each restart starts from a random perturbed-uniform parameterization and
/// runs `n_iters` updates; the best final log-likelihood wins. The
/// per-iteration log-likelihood trace of the winner is nondecreasing up to
/// roundoff.
pub fn fit_em_hmm(
    seqs: &[Vec<u32>],
    n_states: usize,
    n_obs: usize,
    n_iters: usize,
    n_restarts: usize,
    seed: u64,
) -> Result<EmReport> {
    if seqs.is_empty() || seqs.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("EM needs at least one nonempty sequence".into()));
    }
    if n_states == 0 || n_obs == 0 {
        return Err(Error::Param("EM needs at least one state and one symbol".into()));
    }
    for s in seqs {
        if let Some(&bad) = s.iter().find(|&&x| x as usize >= n_obs) {
            return Err(Error::Param(format!("symbol {bad} outside alphabet of size {n_obs}")));
        }
    }

    let mut best: Option<EmReport> = None;
    let mut restart_logliks = Vec::with_capacity(n_restarts);
    for restart in 0..n_restarts {
        let mut rng = substream(seed, restart as u64);
        let mut params = HmmParams {
            transition: random_stochastic(n_states, n_states, &mut rng),
            emission: random_stochastic(n_obs, n_states, &mut rng),
            initial: random_stochastic(n_states, 1, &mut rng).column(0).into_owned(),
        };

        let mut trace = Vec::with_capacity(n_iters);
        for _ in 0..n_iters {
            let mut stats = EmStats {
                trans_num: DMatrix::zeros(n_states, n_states),
                state_occ: DVector::zeros(n_states),
                emit_num: DMatrix::zeros(n_obs, n_states),
                init_sum: DVector::zeros(n_states),
                n_seqs: 0.0,
                loglik: 0.0,
            };
            for s in seqs {
                if !s.is_empty() {
                    em_accumulate(&params, s, &mut stats);
                }
            }
            trace.push(stats.loglik);

            let mut transition = stats.trans_num;
            for i in 0..n_states {
                let denom = stats.state_occ[i].max(1e-300);
                for j in 0..n_states {
                    transition[(j, i)] /= denom;
                }
            }
            let mut emission = stats.emit_num.clone();
            for i in 0..n_states {
                let denom = stats.emit_num.column(i).sum().max(1e-300);
                for x in 0..n_obs {
                    emission[(x, i)] /= denom;
                }
            }
            normalize_columns(&mut transition);
            normalize_columns(&mut emission);
            let mut initial = &stats.init_sum / stats.n_seqs;
            let z = initial.sum();
            initial /= z;
            params = HmmParams { transition, emission, initial };
        }
        let final_ll = seqs.iter().filter(|s| !s.is_empty()).map(|s| {
            log_likelihood(&params, s).unwrap_or(f64::NEG_INFINITY)
        }).sum::<f64>();
        restart_logliks.push(final_ll);
        if best.as_ref().map_or(true, |b| final_ll > b.loglik) {
            best = Some(EmReport {
                params,
                loglik: final_ll,
                loglik_trace: trace,
                restart_logliks: Vec::new(),
            });
        }
    }
    let mut report = best.expect("at least one restart");
    report.restart_logliks = restart_logliks;
    Ok(report)
}

/// Renormalizes columns to sum to one, guarding empty columns with a uniform
/// fallback.
fn normalize_columns(m: &mut DMatrix<f64>) {
    let rows = m.nrows();
    for mut col in m.column_iter_mut() {
        let s = col.sum();
        if s <= 0.0 {
            col.fill(1.0 / rows as f64);
        } else {
            col /= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain_params() -> HmmParams {
        HmmParams::new(
            DMatrix::from_row_slice(2, 2, &[0.7, 0.4, 0.3, 0.6]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]),
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn operators_split_by_row_blocks() {
        let w = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let ops = hmm_operators_from_w(&w, &Basis::identity(2), DVector::from_element(2, 1.0)).unwrap();
        assert_eq!(ops.n_symbols(), 2);
        assert_abs_diff_eq!(ops.b[0], DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_abs_diff_eq!(ops.b[1], DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]));
    }

    #[test]
    fn misaligned_blocks_are_rejected() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0; 6]);
        assert!(hmm_operators_from_w(&w, &Basis::identity(2), DVector::from_element(2, 1.0)).is_err());
    }

    #[test]
    fn forward_predictive_starts_at_marginal() {
        let params = chain_params();
        let preds = forward_predictive(&params, &[0, 1, 0]).unwrap();
        let first = &params.emission * &params.initial;
        assert_abs_diff_eq!(preds[0], first, epsilon = 1e-14);
        for p in &preds {
            assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_chain_filters_to_point_mass() {
        // state 1 always emits symbol 1 and stays; state 0 emits 0 and moves to 1
        let params = HmmParams::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let preds = forward_predictive(&params, &[0, 1, 1]).unwrap();
        assert_abs_diff_eq!(preds[1][1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(preds[2][1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn em_loglik_is_monotone_and_beats_uniform() {
        let params = chain_params();
        let seqs = crate::seqdata::sample_hmm(&params, 60, 8, 11).unwrap();
        let raw: Vec<Vec<u32>> = seqs
            .iter()
            .map(|s| match &s.obs {
                crate::seqdata::Observations::Discrete(v) => v.clone(),
                _ => unreachable!(),
            })
            .collect();
        let report = fit_em_hmm(&raw, 2, 2, 40, 2, 5).unwrap();
        for w in report.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0].abs(), "loglik decreased: {} -> {}", w[0], w[1]);
        }
        let uniform = HmmParams::new(
            DMatrix::from_element(2, 2, 0.5),
            DMatrix::from_element(2, 2, 0.5),
            DVector::from_element(2, 0.5),
        )
        .unwrap();
        let ll_uniform: f64 = raw.iter().map(|s| log_likelihood(&uniform, s).unwrap()).sum();
        assert!(report.loglik > ll_uniform);
    }

    #[test]
    fn single_state_em_recovers_frequencies() {
        let seqs = vec![vec![0u32, 1, 1, 0, 1, 1, 1, 0]];
        let report = fit_em_hmm(&seqs, 1, 2, 20, 1, 3).unwrap();
        assert_abs_diff_eq!(report.params.emission[(1, 0)], 5.0 / 8.0, epsilon = 1e-9);
    }

    #[test]
    fn clamping_keeps_distributions_normalized() {
        let dist = DVector::from_vec(vec![-0.05, 0.55, 0.5]);
        let fixed = clamp_distribution(&dist, 1e-9);
        assert!(fixed.min() >= 0.0);
        assert_abs_diff_eq!(fixed.sum(), 1.0, epsilon = 1e-12);
    }
}
