//! Featurization of sequences into (history, future, extended-future) rows.
//!
//! The two-stage learner consumes per-time-step triplets: history features
//! `h_t` act as instruments, future-window features `psi_t` as regression
//! inputs, and extended-future features `xi_t` (one extra observation) as
//! outputs. This module turns raw sequences into such triplets, learns
//! low-rank bases for future features, and provides the first-plus-second
//! moment stacking used by the Gaussian filtering plugin.
//!
//! Window conventions, uniform across feature kinds:
//! - the history window covers the `b = history_len` steps before `t`,
//!   stacked or indexed in ascending time order;
//! - the future window covers `k = future_len` steps starting at `t`;
//! - the extended future covers `k + 1` steps starting at `t`, laid out as
//!   the current observation followed by the future window of `t + 1`, so
//!   filtering can condition on the first block and keep the rest.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::{Observations, ObservationSeq};
use crate::serde_mat;

/// How raw observations are encoded into triplet rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Discrete symbols; history is the indicator of the single previous
    /// observation (`history_len` must be 1).
    DiscreteIndicator,
    /// Discrete symbols; history is a one-hot over the joint assignment of
    /// the previous `history_len` observations.
    DiscreteJointHistory,
    /// Binary symbols; history is the raw 0/1 vector of the previous
    /// `history_len` observations.
    BinaryHistory,
    /// Real vectors; history and future are stacked windows of raw
    /// observations.
    StackedWindow,
    /// Real vectors; future features are the stacked window augmented with
    /// its outer product (first and second moments), history stays raw.
    MomentStackedWindow,
}

impl FeatureKind {
    /// True for the kinds operating on discrete symbol sequences.
    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            FeatureKind::DiscreteIndicator | FeatureKind::DiscreteJointHistory | FeatureKind::BinaryHistory
        )
    }
}

/// Orthonormal basis for a future-feature subspace, with the singular values
/// of the matrix it was extracted from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    /// `d x m` matrix with orthonormal columns.
    #[serde(with = "serde_mat::mat")]
    pub u: DMatrix<f64>,
    /// Singular values paired with the columns, nonincreasing.
    #[serde(with = "serde_mat::vec")]
    pub singular_values: DVector<f64>,
}

impl Basis {
    /// Identity basis on a `d`-dimensional space.
    pub fn identity(d: usize) -> Self {
        Basis { u: DMatrix::identity(d, d), singular_values: DVector::from_element(d, 1.0) }
    }

    /// Number of basis columns.
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// Ambient dimension the basis columns live in.
    pub fn ambient_dim(&self) -> usize {
        self.u.nrows()
    }

    /// Checks orthonormality of the columns and ordering of the singular
    /// values.
    pub fn validate(&self) -> Result<()> {
        if self.u.ncols() != self.singular_values.len() {
            return Err(Error::Dim(format!(
                "basis has {} columns but {} singular values",
                self.u.ncols(),
                self.singular_values.len()
            )));
        }
        let gram = self.u.transpose() * &self.u;
        let eye = DMatrix::identity(gram.nrows(), gram.ncols());
        if (gram - eye).abs().max() > 1e-10 {
            return Err(Error::Numerical("basis columns are not orthonormal".into()));
        }
        for i in 0..self.singular_values.len() {
            if self.singular_values[i] < 0.0 {
                return Err(Error::Numerical("negative singular value in basis".into()));
            }
            if i > 0 && self.singular_values[i] > self.singular_values[i - 1] + 1e-12 {
                return Err(Error::Numerical("basis singular values are not nonincreasing".into()));
            }
        }
        Ok(())
    }
}

fn default_len_one() -> usize {
    1
}

fn default_min_seq_len() -> usize {
    5
}

/// Declarative choice of history, future, and extended-future statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    /// Future window length `k`.
    #[serde(default = "default_len_one")]
    pub future_len: usize,
    /// History window length `b`.
    #[serde(default = "default_len_one")]
    pub history_len: usize,
    /// Alphabet size for discrete kinds.
    #[serde(default)]
    pub n_obs: Option<usize>,
    /// Per-step observation dimension for continuous kinds.
    #[serde(default)]
    pub obs_dim: Option<usize>,
    /// Sequences shorter than this are dropped before extraction.
    #[serde(default = "default_min_seq_len")]
    pub min_seq_len: usize,
    /// Optional basis applied to future features: directly for discrete
    /// kinds, to the raw window (before any moment stacking) for continuous
    /// kinds.
    #[serde(default)]
    pub projection: Option<Basis>,
}

impl FeatureSpec {
    /// Indicator features of single observations, alphabet size `n_obs`.
    pub fn discrete_indicator(n_obs: usize) -> Self {
        FeatureSpec {
            kind: FeatureKind::DiscreteIndicator,
            future_len: 1,
            history_len: 1,
            n_obs: Some(n_obs),
            obs_dim: None,
            min_seq_len: default_min_seq_len(),
            projection: None,
        }
    }

    /// One-hot joint encoding of the previous `history_len` observations.
    pub fn discrete_joint_history(n_obs: usize, history_len: usize) -> Self {
        FeatureSpec {
            kind: FeatureKind::DiscreteJointHistory,
            future_len: 1,
            history_len,
            n_obs: Some(n_obs),
            obs_dim: None,
            min_seq_len: default_min_seq_len(),
            projection: None,
        }
    }

    /// Raw 0/1 history vector of the previous `history_len` observations.
    pub fn binary_history(history_len: usize) -> Self {
        FeatureSpec {
            kind: FeatureKind::BinaryHistory,
            future_len: 1,
            history_len,
            n_obs: Some(2),
            obs_dim: None,
            min_seq_len: default_min_seq_len(),
            projection: None,
        }
    }

    /// Stacked raw windows for continuous observations.
    pub fn stacked_window(obs_dim: usize, history_len: usize, future_len: usize) -> Self {
        FeatureSpec {
            kind: FeatureKind::StackedWindow,
            future_len,
            history_len,
            n_obs: None,
            obs_dim: Some(obs_dim),
            min_seq_len: default_min_seq_len(),
            projection: None,
        }
    }

    /// First-plus-second-moment future features over stacked windows.
    pub fn moment_stacked_window(obs_dim: usize, history_len: usize, future_len: usize) -> Self {
        FeatureSpec {
            kind: FeatureKind::MomentStackedWindow,
            future_len,
            history_len,
            n_obs: None,
            obs_dim: Some(obs_dim),
            min_seq_len: default_min_seq_len(),
            projection: None,
        }
    }

    /// Checks internal consistency of the spec.
    pub fn validate(&self) -> Result<()> {
        if self.future_len < 1 {
            return Err(Error::Param("future window length must be at least 1".into()));
        }
        if self.history_len < 1 {
            return Err(Error::Param("history length must be at least 1".into()));
        }
        if self.kind.is_discrete() {
            let n = self
                .n_obs
                .ok_or_else(|| Error::Param("discrete feature kinds need n_obs".into()))?;
            if n < 1 {
                return Err(Error::Param("alphabet size must be at least 1".into()));
            }
            if self.kind == FeatureKind::BinaryHistory && n != 2 {
                return Err(Error::Param("binary history features need a binary alphabet".into()));
            }
            if self.kind == FeatureKind::DiscreteIndicator && self.history_len != 1 {
                return Err(Error::Param(
                    "indicator history covers a single step; use the joint-history kind for longer windows"
                        .into(),
                ));
            }
        } else {
            let d = self
                .obs_dim
                .ok_or_else(|| Error::Param("continuous feature kinds need obs_dim".into()))?;
            if d < 1 {
                return Err(Error::Param("observation dimension must be at least 1".into()));
            }
        }
        if let Some(basis) = &self.projection {
            basis.validate()?;
            let expect = self.raw_window_dim();
            if basis.ambient_dim() != expect {
                return Err(Error::Dim(format!(
                    "projection basis acts on dimension {} but future features have dimension {expect}",
                    basis.ambient_dim()
                )));
            }
        }
        Ok(())
    }

    /// Dimension of the unprojected future features: `n_obs^k` for discrete
    /// kinds, `k * obs_dim` for continuous kinds.
    pub fn raw_window_dim(&self) -> usize {
        if self.kind.is_discrete() {
            self.n_obs.unwrap_or(0).pow(self.future_len as u32)
        } else {
            self.future_len * self.obs_dim.unwrap_or(0)
        }
    }

    /// Dimension of the future window after any projection.
    pub fn window_dim(&self) -> usize {
        match &self.projection {
            Some(b) => b.rank(),
            None => self.raw_window_dim(),
        }
    }

    /// History feature dimension.
    pub fn d_h(&self) -> usize {
        match self.kind {
            FeatureKind::DiscreteIndicator => self.n_obs.unwrap_or(0),
            FeatureKind::DiscreteJointHistory => self.n_obs.unwrap_or(0).pow(self.history_len as u32),
            FeatureKind::BinaryHistory => self.history_len,
            FeatureKind::StackedWindow | FeatureKind::MomentStackedWindow => {
                self.history_len * self.obs_dim.unwrap_or(0)
            }
        }
    }

    /// Future feature dimension (after projection and moment stacking).
    pub fn d_psi(&self) -> usize {
        let p = self.window_dim();
        match self.kind {
            FeatureKind::MomentStackedWindow => p + p * p,
            _ => p,
        }
    }

    /// Extended-future feature dimension.
    pub fn d_xi(&self) -> usize {
        match self.kind {
            FeatureKind::DiscreteIndicator | FeatureKind::DiscreteJointHistory | FeatureKind::BinaryHistory => {
                self.n_obs.unwrap_or(0) * self.window_dim()
            }
            FeatureKind::StackedWindow => self.obs_dim.unwrap_or(0) + self.window_dim(),
            FeatureKind::MomentStackedWindow => {
                let e = self.obs_dim.unwrap_or(0) + self.window_dim();
                e + e * e
            }
        }
    }

    /// Shortest sequence that yields at least one triplet, taking the
    /// configured minimum length into account.
    pub fn min_usable_len(&self) -> usize {
        self.min_seq_len.max(self.history_len + self.future_len + 1)
    }
}

/// Rows of (history, future, extended-future) features plus the per-row raw
/// observation and the shifted future features, grouped by source sequence.
#[derive(Clone, Debug)]
pub struct TripletDataset {
    /// `N x d_h` history features.
    pub h: DMatrix<f64>,
    /// `N x d_psi` future features.
    pub psi: DMatrix<f64>,
    /// `N x d_xi` extended-future features.
    pub xi: DMatrix<f64>,
    /// `N x d_psi` future features of the next time step.
    pub psi_next: DMatrix<f64>,
    /// Raw observation at each row's time step.
    pub obs: Observations,
    /// Half-open row ranges, one per contributing sequence.
    pub seq_ranges: Vec<(usize, usize)>,
    /// The spec the rows were extracted under.
    pub spec: FeatureSpec,
    /// Sequences skipped because they were shorter than the usable minimum.
    pub n_skipped: usize,
}

impl TripletDataset {
    /// Number of triplet rows.
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    /// Row indices of the first triplet of each contributing sequence.
    pub fn first_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.seq_ranges.iter().map(|(s, _)| *s)
    }
}

/// Index of a symbol window in the joint one-hot encoding, ascending time
/// order with the earliest symbol most significant.
fn joint_index(window: &[u32], n: usize) -> usize {
    window.iter().fold(0usize, |acc, &s| acc * n + s as usize)
}

fn check_symbols(symbols: &[u32], n: usize, id: &str) -> Result<()> {
    if let Some(&bad) = symbols.iter().find(|&&s| s as usize >= n) {
        return Err(Error::Dim(format!(
            "sequence {id} contains symbol {bad} outside alphabet of size {n}"
        )));
    }
    Ok(())
}

/// Extracts all (h_t, psi_t, xi_t) triplets from the given sequences.
///
/// Time steps whose history or extended-future window would cross a sequence
/// boundary are skipped; there is no padding. A length-`L` sequence with
/// history `b` and future window `k` therefore yields `max(0, L - b - k)`
/// rows, and sequences shorter than `min_seq_len` are dropped entirely.
pub fn extract_triplets(seqs: &[ObservationSeq], spec: &FeatureSpec) -> Result<TripletDataset> {
    spec.validate()?;
    let b = spec.history_len;
    let k = spec.future_len;
    let discrete = spec.kind.is_discrete();

    let mut h_rows: Vec<f64> = Vec::new();
    let mut psi_rows: Vec<f64> = Vec::new();
    let mut xi_rows: Vec<f64> = Vec::new();
    let mut psi_next_rows: Vec<f64> = Vec::new();
    let mut obs_symbols: Vec<u32> = Vec::new();
    let mut obs_vectors: Vec<f64> = Vec::new();
    let mut seq_ranges: Vec<(usize, usize)> = Vec::new();
    let mut n_rows = 0usize;
    let mut n_skipped = 0usize;

    for seq in seqs {
        if seq.is_discrete() != discrete {
            return Err(Error::Dim(format!(
                "sequence {} does not match the feature kind's observation type",
                seq.id
            )));
        }
        if seq.len() < spec.min_usable_len() {
            n_skipped += 1;
            continue;
        }
        let start_row = n_rows;
        match (&seq.obs, discrete) {
            (Observations::Discrete(symbols), true) => {
                let n = spec.n_obs.expect("validated discrete spec");
                check_symbols(symbols, n, &seq.id)?;
                let d_raw = spec.raw_window_dim();
                for t in b..=(symbols.len() - 1 - k) {
                    push_history_row(&mut h_rows, spec, &symbols[t - b..t]);
                    push_one_hot(&mut psi_rows, d_raw, joint_index(&symbols[t..t + k], n));
                    let xi_hot = symbols[t] as usize * d_raw + joint_index(&symbols[t + 1..t + 1 + k], n);
                    push_one_hot(&mut xi_rows, n * d_raw, xi_hot);
                    push_one_hot(&mut psi_next_rows, d_raw, joint_index(&symbols[t + 1..t + 1 + k], n));
                    obs_symbols.push(symbols[t]);
                    n_rows += 1;
                }
            }
            (Observations::Continuous(rows), false) => {
                let d_o = spec.obs_dim.expect("validated continuous spec");
                if rows.ncols() != d_o {
                    return Err(Error::Dim(format!(
                        "sequence {} has observation dimension {} but the spec declares {d_o}",
                        seq.id,
                        rows.ncols()
                    )));
                }
                for t in b..=(rows.nrows() - 1 - k) {
                    stack_window(&mut h_rows, rows, t - b, b);
                    let w_t = window_vector(rows, t, k, spec.projection.as_ref());
                    let w_next = window_vector(rows, t + 1, k, spec.projection.as_ref());
                    let o_t = rows.row(t).transpose();
                    match spec.kind {
                        FeatureKind::StackedWindow => {
                            psi_rows.extend(w_t.iter());
                            xi_rows.extend(o_t.iter());
                            xi_rows.extend(w_next.iter());
                            psi_next_rows.extend(w_next.iter());
                        }
                        FeatureKind::MomentStackedWindow => {
                            psi_rows.extend(moment_stack(&w_t).iter());
                            let mut ext = DVector::zeros(d_o + w_next.len());
                            ext.rows_mut(0, d_o).copy_from(&o_t);
                            ext.rows_mut(d_o, w_next.len()).copy_from(&w_next);
                            xi_rows.extend(moment_stack(&ext).iter());
                            psi_next_rows.extend(moment_stack(&w_next).iter());
                        }
                        _ => unreachable!("discrete kinds handled above"),
                    }
                    obs_vectors.extend(o_t.iter());
                    n_rows += 1;
                }
            }
            _ => unreachable!("kind mismatch rejected above"),
        }
        seq_ranges.push((start_row, n_rows));
    }

    if n_rows == 0 {
        return Err(Error::Empty(format!(
            "no sequence of length at least {} to extract triplets from",
            spec.min_usable_len()
        )));
    }

    let h = DMatrix::from_row_slice(n_rows, spec.d_h(), &h_rows);
    let mut psi;
    let mut xi;
    let mut psi_next;
    if discrete {
        let d_raw = spec.raw_window_dim();
        let n = spec.n_obs.expect("validated discrete spec");
        psi = DMatrix::from_row_slice(n_rows, d_raw, &psi_rows);
        xi = DMatrix::from_row_slice(n_rows, n * d_raw, &xi_rows);
        psi_next = DMatrix::from_row_slice(n_rows, d_raw, &psi_next_rows);
        if let Some(basis) = &spec.projection {
            psi = &psi * &basis.u;
            psi_next = &psi_next * &basis.u;
            let m = basis.rank();
            let mut xi_proj = DMatrix::zeros(n_rows, n * m);
            for x in 0..n {
                let block = xi.columns(x * d_raw, d_raw) * &basis.u;
                xi_proj.columns_mut(x * m, m).copy_from(&block);
            }
            xi = xi_proj;
        }
    } else {
        psi = DMatrix::from_row_slice(n_rows, spec.d_psi(), &psi_rows);
        xi = DMatrix::from_row_slice(n_rows, spec.d_xi(), &xi_rows);
        psi_next = DMatrix::from_row_slice(n_rows, spec.d_psi(), &psi_next_rows);
    }

    let obs = if discrete {
        Observations::Discrete(obs_symbols)
    } else {
        Observations::Continuous(DMatrix::from_row_slice(n_rows, spec.obs_dim.expect("continuous"), &obs_vectors))
    };

    Ok(TripletDataset { h, psi, xi, psi_next, obs, seq_ranges, spec: spec.clone(), n_skipped })
}

fn push_history_row(out: &mut Vec<f64>, spec: &FeatureSpec, window: &[u32]) {
    match spec.kind {
        FeatureKind::DiscreteIndicator => {
            let n = spec.n_obs.expect("discrete");
            push_one_hot(out, n, window[window.len() - 1] as usize);
        }
        FeatureKind::DiscreteJointHistory => {
            let n = spec.n_obs.expect("discrete");
            push_one_hot(out, spec.d_h(), joint_index(window, n));
        }
        FeatureKind::BinaryHistory => {
            out.extend(window.iter().map(|&s| f64::from(s)));
        }
        _ => unreachable!("continuous history is stacked directly"),
    }
}

fn push_one_hot(out: &mut Vec<f64>, dim: usize, hot: usize) {
    let start = out.len();
    out.resize(start + dim, 0.0);
    out[start + hot] = 1.0;
}

fn stack_window(out: &mut Vec<f64>, rows: &DMatrix<f64>, start: usize, len: usize) {
    for t in start..start + len {
        out.extend(rows.row(t).iter());
    }
}

/// Stacked (optionally projected) window of `len` observation rows starting
/// at `start`.
fn window_vector(rows: &DMatrix<f64>, start: usize, len: usize, basis: Option<&Basis>) -> DVector<f64> {
    let d_o = rows.ncols();
    let mut w = DVector::zeros(len * d_o);
    for i in 0..len {
        w.rows_mut(i * d_o, d_o).copy_from(&rows.row(start + i).transpose());
    }
    match basis {
        Some(b) => b.u.transpose() * w,
        None => w,
    }
}

/// Stacks a vector with its outer product: `[x; vec(x x^T)]`, the outer
/// product laid out row by row.
pub fn moment_stack(x: &DVector<f64>) -> DVector<f64> {
    let d = x.len();
    let mut out = DVector::zeros(d + d * d);
    out.rows_mut(0, d).copy_from(x);
    for i in 0..d {
        for j in 0..d {
            out[d + i * d + j] = x[i] * x[j];
        }
    }
    out
}

/// Top-`m` left singular vectors of `mat`, with a deterministic sign
/// convention: the largest-magnitude entry of each column is positive, ties
/// broken toward the lowest index.
///
/// If `m` exceeds the numerical rank the extra columns are kept from the full
/// decomposition and a warning is logged.
pub fn learn_basis(mat: &DMatrix<f64>, m: usize) -> Result<Basis> {
    if m < 1 || m > mat.nrows().min(mat.ncols()) {
        return Err(Error::Param(format!(
            "basis rank {m} outside [1, {}] for a {}x{} matrix",
            mat.nrows().min(mat.ncols()),
            mat.nrows(),
            mat.ncols()
        )));
    }
    let svd = mat.clone().svd(true, true);
    let u_full = svd.u.as_ref().expect("svd computed with u");
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    if m > rank {
        log::warn!("requested basis rank {m} exceeds numerical rank {rank}; keeping extra columns");
    }
    let mut u = u_full.columns(0, m).into_owned();
    for mut col in u.column_iter_mut() {
        let mut best = 0usize;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    let singular_values = DVector::from_fn(m, |i, _| svd.singular_values[i]);
    Ok(Basis { u, singular_values })
}

/// Basis from the empirical cross-covariance `(1/N) sum psi_t h_t^T` of a
/// dataset.
pub fn learn_basis_from_cross(data: &TripletDataset, m: usize) -> Result<Basis> {
    let n = data.n() as f64;
    let cross = (data.psi.transpose() * &data.h).scale(1.0 / n);
    learn_basis(&cross, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seq(symbols: Vec<u32>) -> ObservationSeq {
        ObservationSeq::discrete("s", symbols).unwrap()
    }

    #[test]
    fn indicator_triplet_layout_matches_hand_expansion() {
        let mut spec = FeatureSpec::discrete_indicator(2);
        spec.min_seq_len = 1;
        let data = extract_triplets(&[seq(vec![0, 1, 0])], &spec).unwrap();
        assert_eq!(data.n(), 1);
        assert_eq!(data.h.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(data.psi.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0]);
        // one-hot over (current, next) = (1, 0) in current-major layout
        assert_eq!(data.xi.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(data.psi_next.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(data.obs, Observations::Discrete(vec![1]));
    }

    #[test]
    fn triplet_count_matches_window_arithmetic() {
        for (len, b, k) in [(10usize, 1usize, 1usize), (10, 4, 1), (10, 2, 3), (6, 4, 1), (5, 3, 2)] {
            let mut spec = FeatureSpec::discrete_joint_history(2, b);
            spec.future_len = k;
            spec.min_seq_len = 1;
            let symbols: Vec<u32> = (0..len).map(|i| (i % 2) as u32).collect();
            let expect = len.saturating_sub(b + k);
            match extract_triplets(&[seq(symbols)], &spec) {
                Ok(data) => assert_eq!(data.n(), expect, "len {len} b {b} k {k}"),
                Err(Error::Empty(_)) => assert_eq!(expect, 0, "len {len} b {b} k {k}"),
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
    }

    #[test]
    fn binary_history_passes_raw_bits_in_time_order() {
        let mut spec = FeatureSpec::binary_history(4);
        spec.min_seq_len = 1;
        let data = extract_triplets(&[seq(vec![1, 0, 1, 1, 0, 1])], &spec).unwrap();
        assert_eq!(data.n(), 1);
        assert_eq!(data.h.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(data.psi.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
    }

    #[test]
    fn joint_history_hot_index_is_ascending_big_endian() {
        let mut spec = FeatureSpec::discrete_joint_history(2, 2);
        spec.min_seq_len = 1;
        // history (o1, o2) = (1, 0) -> index 1*2 + 0 = 2
        let data = extract_triplets(&[seq(vec![1, 0, 1, 1])], &spec).unwrap();
        assert_eq!(data.h.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn short_sequences_are_dropped_and_counted() {
        let spec = FeatureSpec::discrete_indicator(2);
        let seqs = vec![seq(vec![0, 1]), seq(vec![0, 1, 0, 1, 0, 1])];
        let data = extract_triplets(&seqs, &spec).unwrap();
        assert_eq!(data.n_skipped, 1);
        assert_eq!(data.seq_ranges, vec![(0, 4)]);
    }

    #[test]
    fn stacked_window_rows_follow_time_order() {
        let rows = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let mut spec = FeatureSpec::stacked_window(2, 2, 1);
        spec.min_seq_len = 1;
        let data =
            extract_triplets(&[ObservationSeq::continuous("c", rows).unwrap()], &spec).unwrap();
        assert_eq!(data.n(), 1);
        assert_eq!(data.h.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(data.psi.row(0).iter().copied().collect::<Vec<_>>(), vec![5.0, 6.0]);
        assert_eq!(data.xi.row(0).iter().copied().collect::<Vec<_>>(), vec![5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn moment_stack_expands_first_and_second_moments() {
        assert_eq!(moment_stack(&DVector::from_vec(vec![0.0])).as_slice(), &[0.0, 0.0]);
        assert_eq!(
            moment_stack(&DVector::from_vec(vec![1.0, 2.0])).as_slice(),
            &[1.0, 2.0, 1.0, 2.0, 2.0, 4.0]
        );
    }

    #[test]
    fn moment_stack_norm_identity() {
        let x = DVector::from_vec(vec![0.3, -1.2, 2.4, 0.05]);
        let stacked = moment_stack(&x);
        let n2 = x.norm_squared();
        assert_abs_diff_eq!(stacked.norm_squared(), n2 + n2 * n2, epsilon = 1e-12);
    }

    #[test]
    fn basis_of_rank_one_matrix_recovers_direction() {
        let u = DVector::from_vec(vec![0.6, -0.8]);
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let mat = &u * v.transpose();
        let basis = learn_basis(&mat, 1).unwrap();
        // sign convention flips the column so its largest-magnitude entry is positive
        assert_abs_diff_eq!(basis.u[(0, 0)], -0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(basis.u[(1, 0)], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(basis.singular_values[0], v.norm(), epsilon = 1e-12);
        basis.validate().unwrap();
    }

    #[test]
    fn full_rank_basis_is_complete() {
        let mat = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, -0.3, 1.5, 0.2, 0.0, 0.4, 0.9]);
        let basis = learn_basis(&mat, 3).unwrap();
        let uut = &basis.u * basis.u.transpose();
        assert_abs_diff_eq!(uut, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn projection_shrinks_future_features() {
        let mut spec = FeatureSpec::discrete_indicator(3);
        spec.min_seq_len = 1;
        let seqs = vec![seq(vec![0, 1, 2, 0, 1, 2, 0])];
        let full = extract_triplets(&seqs, &spec).unwrap();
        let basis = learn_basis_from_cross(&full, 2).unwrap();
        spec.projection = Some(basis.clone());
        let proj = extract_triplets(&seqs, &spec).unwrap();
        assert_eq!(proj.psi.ncols(), 2);
        assert_eq!(proj.xi.ncols(), 6);
        let expect = &full.psi * &basis.u;
        assert_abs_diff_eq!(proj.psi, expect, epsilon = 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = FeatureSpec::discrete_indicator(2);
        spec.history_len = 3;
        assert!(spec.validate().is_err());
        let spec = FeatureSpec { n_obs: None, ..FeatureSpec::discrete_indicator(2) };
        assert!(spec.validate().is_err());
        let mut spec = FeatureSpec::binary_history(2);
        spec.n_obs = Some(3);
        assert!(spec.validate().is_err());
    }
}
