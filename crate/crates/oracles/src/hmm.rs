//! Reference HMM machinery: forward recursion, exact low-order joint
//! distributions, stationary distribution by power iteration.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

/// A hidden Markov model held as plain matrices.
///
/// `t[i][j] = P(s' = i | s = j)` (column-stochastic), `o[x][j] = P(o = x | s = j)`,
/// `pi[j] = P(s_1 = j)`. Observation is emitted from the current state, then
/// the state transitions.
#[derive(Clone, Debug)]
pub struct HmmRef {
    pub t: DMatrix<f64>,
    pub o: DMatrix<f64>,
    pub pi: DVector<f64>,
}

impl HmmRef {
    pub fn n_states(&self) -> usize {
        self.t.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.o.nrows()
    }

    /// Draws a random model with every probability bounded away from zero,
    /// so filtered distributions stay well inside the simplex.
    pub fn random(n_states: usize, n_obs: usize, rng: &mut ChaCha8Rng) -> Self {
        let col = |rows: usize, rng: &mut ChaCha8Rng| -> DVector<f64> {
            let mut v = DVector::from_fn(rows, |_, _| 0.05 + rng.random::<f64>());
            v /= v.sum();
            v
        };
        let mut t = DMatrix::zeros(n_states, n_states);
        let mut o = DMatrix::zeros(n_obs, n_states);
        for j in 0..n_states {
            t.set_column(j, &col(n_states, rng));
            o.set_column(j, &col(n_obs, rng));
        }
        let pi = col(n_states, rng);
        HmmRef { t, o, pi }
    }

    /// Samples a length-`len` observation sequence.
    pub fn sample(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let mut state = draw_categorical(self.pi.as_slice(), rng);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let obs_dist: Vec<f64> = (0..self.n_obs()).map(|x| self.o[(x, state)]).collect();
            out.push(draw_categorical(&obs_dist, rng) as u32);
            let trans: Vec<f64> = (0..self.n_states()).map(|i| self.t[(i, state)]).collect();
            state = draw_categorical(&trans, rng);
        }
        out
    }

    /// One-step predictive distributions P(o_t = . | o_{1:t-1}) for every t,
    /// by the forward recursion over normalized state beliefs.
    pub fn predictive_distributions(&self, obs: &[u32]) -> Vec<DVector<f64>> {
        let mut belief = self.pi.clone();
        let mut out = Vec::with_capacity(obs.len());
        for &x in obs {
            out.push(&self.o * &belief);
            // condition on o_t = x, then advance one step
            let mut post = belief.clone();
            for j in 0..self.n_states() {
                post[j] *= self.o[(x as usize, j)];
            }
            let z = post.sum();
            assert!(z > 0.0, "observation has zero likelihood under the model");
            belief = (&self.t * post) / z;
        }
        out
    }

    /// Total log-likelihood of a sequence set under the model.
    pub fn log_likelihood(&self, seqs: &[Vec<u32>]) -> f64 {
        let mut total = 0.0;
        for obs in seqs {
            let mut belief = self.pi.clone();
            for &x in obs {
                let mut post = belief.clone();
                for j in 0..self.n_states() {
                    post[j] *= self.o[(x as usize, j)];
                }
                let z = post.sum();
                assert!(z > 0.0);
                total += z.ln();
                belief = (&self.t * post) / z;
            }
        }
        total
    }

    /// Stationary distribution of the transition matrix by power iteration.
    pub fn stationary(&self, tol: f64) -> DVector<f64> {
        let n = self.n_states();
        let mut v = DVector::from_element(n, 1.0 / n as f64);
        for _ in 0..100_000 {
            let next = (&self.t * &v).scale(1.0);
            let next = &next / next.sum();
            if (&next - &v).abs().max() < tol {
                return next;
            }
            v = next;
        }
        v
    }

    /// Exact low-order joint distributions of the first three observations.
    pub fn exact_tables(&self) -> ExactTables {
        let n = self.n_obs();
        let pi_diag = DMatrix::from_diagonal(&self.pi);
        let p1 = &self.o * &self.pi;
        let p21 = &self.o * &self.t * &pi_diag * self.o.transpose();
        let mut p3x1 = Vec::with_capacity(n);
        for x in 0..n {
            let ox = DMatrix::from_diagonal(&self.o.row(x).transpose());
            p3x1.push(&self.o * &self.t * ox * &self.t * &pi_diag * self.o.transpose());
        }
        // rows of p231 are blocks indexed by o_2, each block a copy of p3x1[x]
        let mut p231 = DMatrix::zeros(n * n, n);
        for x in 0..n {
            p231.view_mut((x * n, 0), (n, n)).copy_from(&p3x1[x]);
        }
        ExactTables { p1, p21, p231, p3x1 }
    }
}

/// Exact joint observation tables.
///
/// `p1[i] = P(o_1 = i)`, `p21[i][j] = P(o_2 = i, o_1 = j)`,
/// `p3x1[x][i][j] = P(o_3 = i, o_2 = x, o_1 = j)`, and `p231` stacks the
/// `p3x1` blocks by the value of `o_2`.
#[derive(Clone, Debug)]
pub struct ExactTables {
    pub p1: DVector<f64>,
    pub p21: DMatrix<f64>,
    pub p231: DMatrix<f64>,
    pub p3x1: Vec<DMatrix<f64>>,
}

fn draw_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
