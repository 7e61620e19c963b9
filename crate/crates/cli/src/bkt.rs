//! Model comparison on synthetic knowledge-tracing data.
//!
//! One pool of binary response sequences is generated, then repeatedly
//! split at random into a training and a testing fold. Every configured
//! model is fit on each training fold and scored on the matching test fold
//! by mean absolute error between the indicator of a correct response and
//! the model's predicted probability of one. Scoring skips a fixed warm-up
//! prefix of every test sequence, identically for all models, so no model
//! is penalized for the steps its history features cannot cover.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use psrlearn::hmm::{fit_em_hmm, forward_predictive};
use psrlearn::seqdata::{sample_hmm_lengths, ObservationSeq, Observations};
use psrlearn::twostage::{filter_sequence, train_discrete, PredictiveModel};
use psrlearn::{rng, Error};

use crate::artifacts::{ensure_dir, fmt_f64, write_metadata, Table};
use crate::config::{config_hash, BktConfig, ModelSpec};
use crate::{CliError, CliResult};

/// Error summary of one model on one fold.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MaeScore {
    /// Mean absolute error pooled over all scored time steps.
    pub pooled: f64,
    /// Mean over sequences of the per-sequence mean absolute error.
    pub per_seq_mean: f64,
    /// Root mean square error over the same pooled steps.
    pub rmse_pooled: f64,
    /// Scored time steps.
    pub n_steps: usize,
    /// Sequences contributing steps.
    pub n_seqs_scored: usize,
    /// Sequences shorter than the warm-up, skipped entirely.
    pub n_skipped: usize,
    /// Degenerate filter updates that reset the state.
    pub lost_track: usize,
}

/// Scores per-step predicted probabilities of the response `1` against the
/// observed binary responses, ignoring the first `warmup` steps of each
/// sequence.
///
/// `predict` maps a symbol sequence to one probability per step, each made
/// before the step's observation, plus a lost-track count.
pub fn score_binary_predictions(
    seqs: &[ObservationSeq],
    warmup: usize,
    mut predict: impl FnMut(&[u32]) -> Result<(Vec<f64>, usize), Error>,
) -> CliResult<MaeScore> {
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut n_steps = 0usize;
    let mut seq_means = Vec::new();
    let mut n_skipped = 0usize;
    let mut lost_track = 0usize;
    for seq in seqs {
        let Observations::Discrete(symbols) = &seq.obs else {
            return Err(CliError::Config("binary scoring needs discrete sequences".into()));
        };
        if symbols.iter().any(|&x| x > 1) {
            return Err(CliError::Config(format!(
                "sequence {} is not binary; the error metric is defined for responses 0/1",
                seq.id
            )));
        }
        if symbols.len() <= warmup {
            n_skipped += 1;
            continue;
        }
        let (probs, lost) = predict(symbols).map_err(CliError::runtime)?;
        if probs.len() != symbols.len() {
            return Err(CliError::Runtime(format!(
                "predictor returned {} probabilities for {} steps",
                probs.len(),
                symbols.len()
            )));
        }
        lost_track += lost;
        let mut seq_abs = 0.0;
        for t in warmup..symbols.len() {
            let target = if symbols[t] == 1 { 1.0 } else { 0.0 };
            let e = (target - probs[t]).abs();
            seq_abs += e;
            abs_sum += e;
            sq_sum += e * e;
            n_steps += 1;
        }
        seq_means.push(seq_abs / (symbols.len() - warmup) as f64);
    }
    if n_steps == 0 {
        return Err(CliError::Runtime("no sequence long enough to score".into()));
    }
    let n = n_steps as f64;
    Ok(MaeScore {
        pooled: abs_sum / n,
        per_seq_mean: seq_means.iter().sum::<f64>() / seq_means.len() as f64,
        rmse_pooled: (sq_sum / n).sqrt(),
        n_steps,
        n_seqs_scored: seq_means.len(),
        n_skipped,
        lost_track,
    })
}

/// Per-step probabilities of response `1` from a trained pipeline model.
pub fn spectral_probabilities(
    model: &PredictiveModel,
    symbols: &[u32],
) -> Result<(Vec<f64>, usize), Error> {
    let seq = ObservationSeq::discrete("score", symbols.to_vec())?;
    let run = filter_sequence(model, &seq)?;
    let mut probs = Vec::with_capacity(run.predictions.len());
    for pred in &run.predictions {
        let dist = pred
            .distribution()
            .ok_or_else(|| Error::Param("binary scoring needs a discrete model".into()))?;
        probs.push(dist[1]);
    }
    Ok((probs, run.lost_track))
}

/// One model's outcome on one split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub name: String,
    pub score: Option<MaeScore>,
    pub fit_seconds: f64,
    pub failure: Option<String>,
}

/// One split's outcomes, in model order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitResult {
    pub split: usize,
    pub models: Vec<ModelOutcome>,
}

/// Per-model aggregate over the successful splits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub mean_mae_pooled: f64,
    pub mean_mae_per_seq: f64,
    pub mean_rmse_pooled: f64,
    pub total_fit_seconds: f64,
    /// Total fit time divided by the first model's total fit time.
    pub relative_fit_time: f64,
    pub n_failed_splits: usize,
}

/// Full experiment outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BktReport {
    pub config_hash: String,
    pub splits: Vec<SplitResult>,
    pub summaries: Vec<ModelSummary>,
}

impl BktReport {
    /// Mean pooled MAE of the named model over its successful splits.
    pub fn mean_mae(&self, name: &str) -> Option<f64> {
        self.summaries.iter().find(|s| s.name == name).map(|s| s.mean_mae_pooled)
    }

    /// Fraction of splits where `a` scored strictly below `b`, over splits
    /// where both succeeded.
    pub fn win_rate(&self, a: &str, b: &str) -> Option<f64> {
        let mut wins = 0usize;
        let mut total = 0usize;
        for split in &self.splits {
            let sa = split.models.iter().find(|m| m.name == a)?.score;
            let sb = split.models.iter().find(|m| m.name == b)?.score;
            if let (Some(sa), Some(sb)) = (sa, sb) {
                total += 1;
                if sa.pooled < sb.pooled {
                    wins += 1;
                }
            }
        }
        (total > 0).then(|| wins as f64 / total as f64)
    }

    pub fn total_fit_seconds(&self, name: &str) -> Option<f64> {
        self.summaries.iter().find(|s| s.name == name).map(|s| s.total_fit_seconds)
    }
}

fn fit_and_score(
    spec: &ModelSpec,
    train: &[ObservationSeq],
    test: &[ObservationSeq],
    warmup: usize,
    em_seed: u64,
) -> (Result<MaeScore, CliError>, f64) {
    match spec {
        ModelSpec::Spectral { .. } => {
            let cfg = spec.train_config().expect("spectral spec");
            let t0 = Instant::now();
            let model = train_discrete(train, &cfg);
            let fit_seconds = t0.elapsed().as_secs_f64();
            let score = model.map_err(CliError::runtime).and_then(|model| {
                score_binary_predictions(test, warmup, |s| spectral_probabilities(&model, s))
            });
            (score, fit_seconds)
        }
        ModelSpec::Em { n_states, n_iters, n_restarts, .. } => {
            let symbol_seqs: Vec<Vec<u32>> = train
                .iter()
                .map(|s| match &s.obs {
                    Observations::Discrete(v) => v.clone(),
                    Observations::Continuous(_) => unreachable!("binary pool"),
                })
                .collect();
            let t0 = Instant::now();
            let fitted = fit_em_hmm(&symbol_seqs, *n_states, 2, *n_iters, *n_restarts, em_seed);
            let fit_seconds = t0.elapsed().as_secs_f64();
            let score = fitted.map_err(CliError::runtime).and_then(|report| {
                score_binary_predictions(test, warmup, |s| {
                    let preds = forward_predictive(&report.params, s)?;
                    Ok((preds.iter().map(|p| p[1]).collect(), 0))
                })
            });
            (score, fit_seconds)
        }
    }
}

/// Generates the sequence pool for a config.
pub fn generate_pool(config: &BktConfig) -> CliResult<Vec<ObservationSeq>> {
    let params = config.bkt.compile().map_err(CliError::config)?;
    let (lo, hi) = config.len_range;
    let mut len_rng = rng::substream(config.data_seed, 1);
    let lengths: Vec<usize> = (0..config.n_seqs).map(|_| len_rng.random_range(lo..=hi)).collect();
    sample_hmm_lengths(&params, &lengths, config.data_seed).map_err(CliError::runtime)
}

/// Runs the full split loop in memory.
pub fn run_bkt(config: &BktConfig) -> CliResult<BktReport> {
    config.validate()?;
    let hash = config_hash(config);
    let pool = generate_pool(config)?;

    let splits: Vec<SplitResult> = (0..config.split.n_splits)
        .into_par_iter()
        .map(|r| {
            let mut indices: Vec<usize> = (0..pool.len()).collect();
            let mut shuffle_rng = rng::substream(config.split.seed, r as u64 + 1);
            indices.shuffle(&mut shuffle_rng);
            let train: Vec<ObservationSeq> =
                indices[..config.split.n_train].iter().map(|&i| pool[i].clone()).collect();
            let test: Vec<ObservationSeq> = indices[config.split.n_train..]
                [..config.split.n_test]
                .iter()
                .map(|&i| pool[i].clone())
                .collect();
            let em_seed = config.split.seed.wrapping_add(r as u64);
            let models = config
                .models
                .iter()
                .map(|spec| {
                    let (score, fit_seconds) =
                        fit_and_score(spec, &train, &test, config.warmup, em_seed);
                    match score {
                        Ok(score) => ModelOutcome {
                            name: spec.name().to_string(),
                            score: Some(score),
                            fit_seconds,
                            failure: None,
                        },
                        Err(e) => ModelOutcome {
                            name: spec.name().to_string(),
                            score: None,
                            fit_seconds,
                            failure: Some(e.to_string()),
                        },
                    }
                })
                .collect();
            SplitResult { split: r, models }
        })
        .collect();

    let mut summaries = Vec::with_capacity(config.models.len());
    let mut first_total = None;
    for (j, spec) in config.models.iter().enumerate() {
        let outcomes: Vec<&ModelOutcome> = splits.iter().map(|s| &s.models[j]).collect();
        let scored: Vec<MaeScore> = outcomes.iter().filter_map(|o| o.score).collect();
        if scored.is_empty() {
            return Err(CliError::Runtime(format!(
                "model {} failed on every split",
                spec.name()
            )));
        }
        let total_fit_seconds: f64 = outcomes.iter().map(|o| o.fit_seconds).sum();
        let first = *first_total.get_or_insert(total_fit_seconds);
        let k = scored.len() as f64;
        summaries.push(ModelSummary {
            name: spec.name().to_string(),
            mean_mae_pooled: scored.iter().map(|s| s.pooled).sum::<f64>() / k,
            mean_mae_per_seq: scored.iter().map(|s| s.per_seq_mean).sum::<f64>() / k,
            mean_rmse_pooled: scored.iter().map(|s| s.rmse_pooled).sum::<f64>() / k,
            total_fit_seconds,
            relative_fit_time: total_fit_seconds / first,
            n_failed_splits: outcomes.len() - scored.len(),
        });
    }

    Ok(BktReport { config_hash: hash, splits, summaries })
}

#[derive(Serialize)]
struct BktMetadata<'a> {
    config_hash: &'a str,
    data_seed: u64,
    split_seed: u64,
    n_splits: usize,
    warmup: usize,
    summaries: &'a [ModelSummary],
    failures: Vec<FailureNote>,
}

#[derive(Serialize)]
struct FailureNote {
    split: usize,
    model: String,
    error: String,
}

/// Runs the experiment and writes `result_table.csv`, one scatter file per
/// model pairing against the first model, and `metadata.json`.
pub fn run_bkt_to_dir(config: &BktConfig, dir: &Path) -> CliResult<BktReport> {
    let report = run_bkt(config)?;
    let dir = ensure_dir(dir)?;
    let seed = config.split.seed;

    let mut header = vec!["split", "model", "mae_pooled", "mae_per_seq"];
    if config.include_rmse {
        header.push("rmse_pooled");
    }
    let mut table = Table::new(&report.config_hash, seed, &header);
    for split in &report.splits {
        for m in &split.models {
            let Some(score) = m.score else { continue };
            let mut row = vec![
                split.split.to_string(),
                m.name.clone(),
                fmt_f64(score.pooled),
                fmt_f64(score.per_seq_mean),
            ];
            if config.include_rmse {
                row.push(fmt_f64(score.rmse_pooled));
            }
            table.row(&row);
        }
    }
    table.write(dir.join("result_table.csv"))?;

    let first = config.models[0].name().to_string();
    for other in config.models.iter().skip(1).map(|m| m.name().to_string()) {
        let mut scatter = Table::new(
            &report.config_hash,
            seed,
            &["split", &format!("mae_{first}"), &format!("mae_{other}")],
        );
        for split in &report.splits {
            let a = split.models.iter().find(|m| m.name == first).and_then(|m| m.score);
            let b = split.models.iter().find(|m| m.name == other).and_then(|m| m.score);
            // a split where either model failed is dropped from the pairing
            if let (Some(a), Some(b)) = (a, b) {
                scatter.row(&[split.split.to_string(), fmt_f64(a.pooled), fmt_f64(b.pooled)]);
            }
        }
        scatter.write(dir.join(format!("scatter_{first}_vs_{other}.csv")))?;
    }

    let failures = report
        .splits
        .iter()
        .flat_map(|s| {
            s.models.iter().filter_map(|m| {
                m.failure.as_ref().map(|e| FailureNote {
                    split: s.split,
                    model: m.name.clone(),
                    error: e.clone(),
                })
            })
        })
        .collect();
    write_metadata(
        &dir,
        &BktMetadata {
            config_hash: &report.config_hash,
            data_seed: config.data_seed,
            split_seed: seed,
            n_splits: config.split.n_splits,
            warmup: config.warmup,
            summaries: &report.summaries,
            failures,
        },
    )?;
    Ok(report)
}
