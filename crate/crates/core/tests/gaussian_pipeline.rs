//! End-to-end checks of the Gaussian moment pipeline against an exact
//! Kalman recursion on linear dynamical system data.

use nalgebra::{DMatrix, DVector};

use psrlearn::seqdata::{sample_lds, LdsParams, Observations, ObservationSeq};
use psrlearn::twostage::{filter_sequence, train_gaussian, GaussianTrainConfig, PredictedObs, PredictiveModel};
use psrlearn_oracles::{lyapunov_fixed_point, KalmanRef};

/// Well-conditioned 2-state system with 1-dim observations. State noise is
/// large enough that conditioning on past observations matters.
fn rotation_lds() -> LdsParams {
    let a = DMatrix::from_row_slice(2, 2, &[0.85, 0.2, -0.2, 0.85]);
    let q = DMatrix::identity(2, 2).scale(0.05);
    let init_cov = lyapunov_fixed_point(&a, &q, 1e-12);
    LdsParams::new(
        a,
        DMatrix::from_row_slice(1, 2, &[1.0, 0.3]),
        q,
        DMatrix::from_element(1, 1, 0.1),
        DVector::zeros(2),
        init_cov,
    )
    .unwrap()
}

fn oracle_for(params: &LdsParams) -> KalmanRef {
    KalmanRef {
        t: params.transition.clone(),
        o: params.observation.clone(),
        state_noise: params.state_noise.clone(),
        obs_noise: params.obs_noise.clone(),
        init_mean: params.init_mean.clone(),
        init_cov: params.init_cov.clone(),
    }
}

fn obs_vectors(seq: &ObservationSeq) -> Vec<DVector<f64>> {
    match &seq.obs {
        Observations::Continuous(m) => (0..m.nrows()).map(|t| m.row(t).transpose()).collect(),
        Observations::Discrete(_) => panic!("expected continuous observations"),
    }
}

fn predicted_means(model: &PredictiveModel, seq: &ObservationSeq) -> (Vec<DVector<f64>>, usize) {
    let run = filter_sequence(model, seq).unwrap();
    let means = run
        .predictions
        .iter()
        .map(|p| match p {
            PredictedObs::Gaussian { mean, .. } => mean.clone(),
            PredictedObs::Distribution(_) => panic!("expected Gaussian predictions"),
        })
        .collect();
    (means, run.lost_track)
}

fn rmse(pred: &[DVector<f64>], truth: &[DVector<f64>]) -> f64 {
    let sq: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y).norm_squared()).sum();
    (sq / truth.len() as f64).sqrt()
}

/// The future window must be strictly larger than the latent state so the
/// residual-covariance component of the moment vector can carry the
/// conditional-covariance offset through the linear stage-2 operator.
fn window_config() -> GaussianTrainConfig {
    GaussianTrainConfig::new(1, 3, 3)
}

#[test]
fn learned_filter_tracks_the_exact_kalman_recursion() {
    let params = rotation_lds();
    let (train, meta) = sample_lds(&params, 30_000, 7).unwrap();
    assert!(!meta.unstable);
    let model = train_gaussian(std::slice::from_ref(&train), &window_config()).unwrap();

    let oracle = oracle_for(&params);
    let mut model_sq = 0.0;
    let mut oracle_sq = 0.0;
    let mut uncond_sq = 0.0;
    let mut count = 0usize;
    for i in 0..5 {
        let (eval, _) = sample_lds(&params, 400, 100 + i).unwrap();
        let ys = obs_vectors(&eval);
        let (model_pred, lost) = predicted_means(&model, &eval);
        assert_eq!(lost, 0, "filter lost track on clean data");
        let oracle_pred = oracle.predictive_means(&ys);
        for t in 0..ys.len() {
            model_sq += (&model_pred[t] - &ys[t]).norm_squared();
            oracle_sq += (&oracle_pred[t] - &ys[t]).norm_squared();
            uncond_sq += ys[t].norm_squared();
            count += 1;
        }
    }
    let model_rmse = (model_sq / count as f64).sqrt();
    let oracle_rmse = (oracle_sq / count as f64).sqrt();
    let uncond_rmse = (uncond_sq / count as f64).sqrt();

    assert!(
        model_rmse <= 1.10 * oracle_rmse,
        "learned filter rmse {model_rmse:.5} exceeds 110% of the exact recursion's {oracle_rmse:.5}"
    );
    assert!(
        model_rmse < uncond_rmse,
        "learned filter rmse {model_rmse:.5} does not beat the stationary-mean predictor {uncond_rmse:.5}"
    );
}

#[test]
fn full_rank_projection_leaves_predictions_unchanged() {
    let params = rotation_lds();
    let (train, _) = sample_lds(&params, 30_000, 11).unwrap();
    let plain = train_gaussian(std::slice::from_ref(&train), &window_config()).unwrap();
    let mut projected_cfg = window_config();
    projected_cfg.rank = Some(3);
    let projected = train_gaussian(std::slice::from_ref(&train), &projected_cfg).unwrap();

    let (eval, _) = sample_lds(&params, 200, 12).unwrap();
    let (a, lost_a) = predicted_means(&plain, &eval);
    let (b, lost_b) = predicted_means(&projected, &eval);
    assert_eq!((lost_a, lost_b), (0, 0), "filters lost track on clean data");
    for t in 0..a.len() {
        assert!(
            (&a[t] - &b[t]).amax() < 1e-6,
            "step {t}: plain {:?} vs full-rank projected {:?}",
            a[t],
            b[t]
        );
    }
}

#[test]
fn gaussian_model_round_trips_through_json() {
    let params = rotation_lds();
    let (train, _) = sample_lds(&params, 2_000, 3).unwrap();
    let model = train_gaussian(std::slice::from_ref(&train), &window_config()).unwrap();

    let text = serde_json::to_string(&model).unwrap();
    let back: PredictiveModel = serde_json::from_str(&text).unwrap();

    let (eval, _) = sample_lds(&params, 100, 4).unwrap();
    let (a, lost_a) = predicted_means(&model, &eval);
    let (b, lost_b) = predicted_means(&back, &eval);
    assert_eq!(lost_a, lost_b);
    for t in 0..a.len() {
        assert!(a[t].iter().all(|v| v.is_finite()), "non-finite prediction at step {t}");
        assert_eq!(a[t], b[t], "serialization changed the prediction at step {t}");
    }
}

#[test]
fn training_rejects_data_shorter_than_the_windows() {
    let params = rotation_lds();
    let short: Vec<ObservationSeq> = (0..3).map(|i| sample_lds(&params, 4, 50 + i).unwrap().0).collect();
    assert!(train_gaussian(&short, &window_config()).is_err());
}
