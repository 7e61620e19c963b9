//! Distributional and determinism checks on the sequence generators.

use nalgebra::{DMatrix, DVector};

use psrlearn::seqdata::{sample_hmm, sample_hmm_lengths, sample_lds, HmmParams, LdsParams, Observations};
use psrlearn_oracles::{lyapunov_fixed_point, HmmRef};

fn chain() -> HmmParams {
    HmmParams::new(
        DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.2, 0.7]),
        DMatrix::from_row_slice(3, 2, &[0.6, 0.1, 0.3, 0.3, 0.1, 0.6]),
        DVector::from_vec(vec![0.5, 0.5]),
    )
    .unwrap()
}

#[test]
fn symbol_frequencies_match_the_stationary_law() {
    let params = chain();
    let oracle = HmmRef {
        t: params.transition.clone(),
        o: params.emission.clone(),
        pi: params.initial.clone(),
    };
    let stationary = oracle.stationary(1e-12);
    let expected = &params.emission * &stationary;

    let seqs = sample_hmm(&params, 400, 50, 21).unwrap();
    let mut counts = vec![0usize; 3];
    let mut total = 0usize;
    for seq in &seqs {
        let Observations::Discrete(symbols) = &seq.obs else { panic!("expected symbols") };
        // skip the burn-in so the counts estimate the stationary law
        for &s in &symbols[50..] {
            counts[s as usize] += 1;
            total += 1;
        }
    }
    for v in 0..3 {
        let freq = counts[v] as f64 / total as f64;
        let p = expected[v];
        let se = (p * (1.0 - p) / total as f64).sqrt();
        assert!(
            (freq - p).abs() < 5.0 * se.max(1e-4),
            "symbol {v}: frequency {freq:.4} vs stationary probability {p:.4}"
        );
    }
}

#[test]
fn observation_covariance_matches_the_lyapunov_fixed_point() {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.1, 0.8]);
    let q = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.05]);
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 1.1]);
    let r = DMatrix::from_row_slice(2, 2, &[0.02, 0.0, 0.0, 0.03]);
    let state_cov = lyapunov_fixed_point(&a, &q, 1e-13);
    // consistency of the fixed point itself
    let residual = (&a * &state_cov * a.transpose() + &q - &state_cov).amax();
    assert!(residual < 1e-10, "fixed point residual {residual:.3e}");

    let params = LdsParams::new(a, c.clone(), q, r.clone(), DVector::zeros(2), state_cov.clone()).unwrap();
    let expected = &c * &state_cov * c.transpose() + &r;

    let (seq, meta) = sample_lds(&params, 200_000, 31).unwrap();
    assert!(!meta.unstable);
    let Observations::Continuous(rows) = &seq.obs else { panic!("expected vectors") };
    let n = rows.nrows() as f64;
    let mean = rows.row_sum() / n;
    let centered = rows - DMatrix::from_fn(rows.nrows(), 2, |_, j| mean[j]);
    let emp = centered.transpose() * &centered / n;
    for i in 0..2 {
        for j in 0..2 {
            let dev = (emp[(i, j)] - expected[(i, j)]).abs();
            assert!(
                dev < 0.05 * expected.amax(),
                "covariance entry ({i},{j}): empirical {:.4} vs fixed point {:.4}",
                emp[(i, j)],
                expected[(i, j)]
            );
        }
    }
}

#[test]
fn generators_are_deterministic_in_the_seed() {
    let params = chain();
    let a = sample_hmm(&params, 60, 4, 5).unwrap();
    let b = sample_hmm(&params, 60, 4, 5).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let (Observations::Discrete(sx), Observations::Discrete(sy)) = (&x.obs, &y.obs) else {
            panic!("expected symbols")
        };
        assert_eq!(sx, sy);
    }
    let c = sample_hmm(&params, 60, 4, 6).unwrap();
    let differs = a.iter().zip(&c).any(|(x, y)| {
        let (Observations::Discrete(sx), Observations::Discrete(sy)) = (&x.obs, &y.obs) else {
            panic!("expected symbols")
        };
        sx != sy
    });
    assert!(differs, "distinct seeds produced identical draws");

    let lds = LdsParams::new(
        DMatrix::from_row_slice(1, 1, &[0.7]),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DMatrix::from_row_slice(1, 1, &[0.1]),
        DMatrix::from_row_slice(1, 1, &[0.1]),
        DVector::zeros(1),
        DMatrix::from_row_slice(1, 1, &[0.2]),
    )
    .unwrap();
    let (s1, _) = sample_lds(&lds, 100, 9).unwrap();
    let (s2, _) = sample_lds(&lds, 100, 9).unwrap();
    let (Observations::Continuous(r1), Observations::Continuous(r2)) = (&s1.obs, &s2.obs) else {
        panic!("expected vectors")
    };
    assert_eq!(r1, r2);
}

#[test]
fn length_schedules_are_respected() {
    let params = chain();
    let lengths = [5usize, 17, 9, 30];
    let seqs = sample_hmm_lengths(&params, &lengths, 3).unwrap();
    assert_eq!(seqs.len(), lengths.len());
    for (seq, &want) in seqs.iter().zip(&lengths) {
        assert_eq!(seq.len(), want);
    }
    let ids: Vec<&str> = seqs.iter().map(|s| s.id.as_str()).collect();
    let mut unique = ids.clone();
    unique.dedup();
    assert_eq!(ids.len(), unique.len(), "sequence ids must be unique");
}

#[test]
fn drifting_systems_are_flagged() {
    let params = LdsParams::new(
        DMatrix::from_row_slice(1, 1, &[1.05]),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DMatrix::from_row_slice(1, 1, &[0.1]),
        DMatrix::from_row_slice(1, 1, &[0.1]),
        DVector::zeros(1),
        DMatrix::from_row_slice(1, 1, &[0.2]),
    )
    .unwrap();
    let (_, meta) = sample_lds(&params, 50, 2).unwrap();
    assert!(meta.unstable);
}
