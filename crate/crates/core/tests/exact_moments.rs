//! Equivalence of the learned filter with exact inference when the
//! pipeline is fed exact population moments instead of samples.
//!
//! With exact single-symbol history moments, the stage-1 conditional means
//! are ratios of low-order joint probability tables, stage 2 recovers the
//! per-symbol update operators exactly, and filtering reproduces the
//! forward-algorithm predictive distributions to numerical precision.

use nalgebra::{DMatrix, DVector};
use psrlearn::features::{learn_basis, Basis, FeatureSpec};
use psrlearn::hmm::hmm_normalizer_from_states;
use psrlearn::rng::seeded;
use psrlearn::seqdata::ObservationSeq;
use psrlearn::twostage::{filter_sequence, s2_regress, PluginBinding, PredictiveModel};
use psrlearn_oracles::hmm::{ExactTables, HmmRef};
use rand::RngExt;

/// Builds the filter from exact joint tables: conditional means per history
/// symbol, probability-weighted stage 2, the normalizer, and the initial
/// state.
fn model_from_exact_tables(tables: &ExactTables, basis: &Basis) -> PredictiveModel {
    let n = tables.p1.len();
    let m = basis.rank();

    // conditional means given each single-symbol history
    let mut x_hat = DMatrix::zeros(n, m);
    let mut y_hat = DMatrix::zeros(n, n * m);
    let mut x_rows_weighted = DMatrix::zeros(n, m);
    let mut y_rows_weighted = DMatrix::zeros(n, n * m);
    for z in 0..n {
        let p_z = tables.p1[z];
        let psi_cond = basis.u.transpose() * (tables.p21.column(z) / p_z);
        let xi_raw = tables.p231.column(z) / p_z;
        let mut xi_cond = DVector::zeros(n * m);
        for x in 0..n {
            let block = basis.u.transpose() * xi_raw.rows(x * n, n);
            xi_cond.rows_mut(x * m, m).copy_from(&block);
        }
        let w = p_z.sqrt();
        x_hat.row_mut(z).copy_from(&psi_cond.transpose());
        y_hat.row_mut(z).copy_from(&xi_cond.transpose());
        x_rows_weighted.row_mut(z).copy_from(&(psi_cond.transpose() * w));
        y_rows_weighted.row_mut(z).copy_from(&(xi_cond.transpose() * w));
    }

    let w = s2_regress(&x_rows_weighted, &y_rows_weighted, 0.0).unwrap();
    let b_inf = hmm_normalizer_from_states(&x_hat).unwrap();
    let q1 = basis.u.transpose() * &tables.p1;

    let mut spec = FeatureSpec::discrete_indicator(n);
    spec.projection = Some(basis.clone());
    PredictiveModel {
        w,
        q1,
        spec,
        plugin: PluginBinding::Hmm { b_inf },
        lambda_s2: 0.0,
        clamp_eps: 1e-9,
    }
}

fn max_prediction_gap(model: &PredictiveModel, hmm: &HmmRef, symbols: &[u32]) -> f64 {
    let truth = hmm.predictive_distributions(symbols);
    let seq = ObservationSeq::discrete("exact", symbols.to_vec()).unwrap();
    let run = filter_sequence(model, &seq).unwrap();
    assert_eq!(run.lost_track, 0, "exact-moment filter lost track");
    let mut worst: f64 = 0.0;
    for (pred, want) in run.predictions.iter().zip(&truth) {
        let got = pred.distribution().unwrap();
        worst = worst.max((got - want).amax());
    }
    worst
}

#[test]
fn exact_moments_reproduce_forward_inference() {
    let mut rng = seeded(42);
    for trial in 0..20 {
        let m = rng.random_range(2..=4usize);
        let n = rng.random_range(m..=5usize);
        let hmm = HmmRef::random(m, n, &mut rng);
        let tables = hmm.exact_tables();
        let basis = learn_basis(&tables.p21, m).unwrap();
        let model = model_from_exact_tables(&tables, &basis);
        let symbols = hmm.sample(100, &mut rng);
        let worst = max_prediction_gap(&model, &hmm, &symbols);
        assert!(
            worst <= 1e-8,
            "trial {trial} (m={m}, n={n}): max deviation {worst:.3e} exceeds 1e-8"
        );
    }
}

#[test]
fn full_rank_operators_match_table_ratios() {
    let mut rng = seeded(7);
    let hmm = HmmRef::random(3, 3, &mut rng);
    let tables = hmm.exact_tables();
    let basis = Basis::identity(3);
    let model = model_from_exact_tables(&tables, &basis);

    // without projection the update operator is the stacked table ratio
    let p21_inv = tables.p21.clone().try_inverse().unwrap();
    let direct = &tables.p231 * p21_inv;
    assert!((&model.w - &direct).amax() < 1e-8, "operator differs from table ratio");

    // and the normalizer degenerates to the all-ones functional
    match &model.plugin {
        PluginBinding::Hmm { b_inf } => {
            let ones = DVector::from_element(3, 1.0);
            assert!((b_inf - ones).amax() < 1e-8, "normalizer is not all-ones: {b_inf}");
        }
        PluginBinding::Gaussian { .. } => unreachable!(),
    }
}

#[test]
fn predictions_are_invariant_to_basis_rotation() {
    let mut rng = seeded(11);
    let hmm = HmmRef::random(3, 4, &mut rng);
    let tables = hmm.exact_tables();
    let basis = learn_basis(&tables.p21, 3).unwrap();

    // random orthogonal rotation of the state coordinates
    let raw = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
    let q = raw.qr().q();
    let rotated = Basis { u: &basis.u * &q, singular_values: basis.singular_values.clone() };
    rotated.validate().unwrap();

    let model_a = model_from_exact_tables(&tables, &basis);
    let model_b = model_from_exact_tables(&tables, &rotated);
    let symbols = hmm.sample(80, &mut rng);
    let seq = ObservationSeq::discrete("rot", symbols).unwrap();
    let run_a = filter_sequence(&model_a, &seq).unwrap();
    let run_b = filter_sequence(&model_b, &seq).unwrap();
    for (a, b) in run_a.predictions.iter().zip(&run_b.predictions) {
        let gap = (a.distribution().unwrap() - b.distribution().unwrap()).amax();
        assert!(gap < 1e-8, "rotation changed a prediction by {gap:.3e}");
    }
}

#[test]
fn sampled_training_approaches_the_exact_limit() {
    use psrlearn::regress::RegressorSpec;
    use psrlearn::twostage::{train_discrete, DiscreteTrainConfig};

    let mut rng = seeded(23);
    // well-separated states so the second spectral direction carries signal
    let hmm = HmmRef {
        t: DMatrix::from_row_slice(2, 2, &[0.85, 0.15, 0.15, 0.85]),
        o: DMatrix::from_row_slice(3, 2, &[0.7, 0.1, 0.2, 0.2, 0.1, 0.7]),
        pi: DVector::from_vec(vec![0.5, 0.5]),
    };
    let tables = hmm.exact_tables();
    let basis = learn_basis(&tables.p21, 2).unwrap();
    let exact_model = model_from_exact_tables(&tables, &basis);

    // a large sample should land near the exact-moment filter
    let mut seqs = Vec::new();
    for i in 0..200 {
        let symbols = hmm.sample(60, &mut rng);
        seqs.push(ObservationSeq::discrete(format!("s{i}"), symbols).unwrap());
    }
    let mut config = DiscreteTrainConfig::new(FeatureSpec::discrete_indicator(3), RegressorSpec::ols());
    config.rank = Some(2);
    let trained = train_discrete(&seqs, &config).unwrap();

    let eval = hmm.sample(100, &mut rng);
    let eval_seq = ObservationSeq::discrete("eval", eval).unwrap();
    let run_exact = filter_sequence(&exact_model, &eval_seq).unwrap();
    let run_trained = filter_sequence(&trained, &eval_seq).unwrap();
    let mut mean_gap = 0.0;
    for (a, b) in run_exact.predictions.iter().zip(&run_trained.predictions) {
        mean_gap += (a.distribution().unwrap() - b.distribution().unwrap()).abs().sum();
    }
    mean_gap /= run_exact.predictions.len() as f64;
    assert!(mean_gap < 0.1, "sampled filter is far from the exact limit: {mean_gap:.3}");
}
