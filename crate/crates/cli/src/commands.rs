//! Generic data, training, filtering, and evaluation commands.
//!
//! These wrap the library pipeline for ad-hoc use outside the packaged
//! experiments: generate a dataset, train any configured model on a
//! sequence file, dump its one-step-ahead predictions, or score it. Models
//! travel as tagged JSON documents so a filter call does not need to know
//! how its model was trained.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use psrlearn::kernel::{train_kernel, KernelModel, KernelTrainConfig};
use psrlearn::seqdata::{
    load_json, make_subsystem_lds, read_sequences, sample_lds, save_json,
    write_sequences_with_comments, ObservationSeq, SubsystemConfig,
};
use psrlearn::twostage::{
    filter_sequence, train_discrete, train_gaussian, DiscreteTrainConfig, GaussianTrainConfig,
    PredictiveModel,
};

use crate::artifacts::{ensure_dir, fmt_f64, write_json, Table};
use crate::bkt::{score_binary_predictions, spectral_probabilities, MaeScore};
use crate::config::{config_hash, BktConfig};
use crate::{CliError, CliResult};

/// Training task, dispatched on the `task` tag.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TrainSpec {
    Discrete(DiscreteTrainConfig),
    Gaussian(GaussianTrainConfig),
    Kernel(KernelTrainConfig),
}

/// A trained model as stored on disk, dispatched on the `model` tag.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SavedModel {
    Spectral(PredictiveModel),
    Kernel(KernelModel),
}

/// Which generator the `generate` command runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum GenerateSystem {
    /// Binary response pool from the knowledge-tracing chain.
    Bkt,
    /// One continuous trajectory of the block-structured linear system.
    SubsystemLds,
}

/// Settings of one `generate` invocation.
#[derive(Clone, Debug)]
pub struct GenerateArgs {
    pub system: GenerateSystem,
    pub seed: u64,
    pub n_seqs: Option<usize>,
    pub len_range: Option<(usize, usize)>,
    pub len: Option<usize>,
}

/// Writes `sequences.csv` and `params.json` for the chosen system.
///
/// Identical arguments produce byte-identical files.
pub fn run_generate(args: &GenerateArgs, dir: &Path) -> CliResult<()> {
    let dir = ensure_dir(dir)?;
    match args.system {
        GenerateSystem::Bkt => {
            let mut config = BktConfig { data_seed: args.seed, ..BktConfig::default() };
            if let Some(n) = args.n_seqs {
                config.n_seqs = n;
            }
            if let Some(r) = args.len_range {
                config.len_range = r;
            }
            config.validate()?;
            let pool = crate::bkt::generate_pool(&config)?;
            let comments = vec![
                format!("config_hash={}", config_hash(&config)),
                format!("seed={}", args.seed),
            ];
            write_sequences_with_comments(dir.join("sequences.csv"), &pool, &comments)
                .map_err(CliError::runtime)?;
            save_json(dir.join("params.json"), &config.bkt).map_err(CliError::runtime)?;
        }
        GenerateSystem::SubsystemLds => {
            let system = SubsystemConfig::default();
            let len = args.len.unwrap_or(2000);
            if len == 0 {
                return Err(CliError::Config("length must be positive".into()));
            }
            let params = make_subsystem_lds(&system, args.seed).map_err(CliError::runtime)?;
            let (seq, meta) = sample_lds(&params, len, args.seed.wrapping_add(0x5eed_0ff5))
                .map_err(CliError::runtime)?;
            let comments = vec![
                format!("config_hash={}", config_hash(&system)),
                format!("seed={}", args.seed),
                format!("unstable={}", meta.unstable),
            ];
            write_sequences_with_comments(dir.join("sequences.csv"), &[seq], &comments)
                .map_err(CliError::runtime)?;
            save_json(dir.join("params.json"), &params).map_err(CliError::runtime)?;
        }
    }
    Ok(())
}

/// First 16 hex digits of the SHA-256 of a file's bytes, for stamping
/// downstream artifacts.
pub fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

/// Trains the spec'd model on a sequence file and writes the tagged model
/// document.
pub fn run_train(spec_path: &Path, data_path: &Path, out_path: &Path) -> CliResult<()> {
    let spec: TrainSpec = load_json(spec_path).map_err(CliError::config)?;
    let seqs = read_sequences(data_path).map_err(CliError::config)?;
    let model = match spec {
        TrainSpec::Discrete(cfg) => {
            SavedModel::Spectral(train_discrete(&seqs, &cfg).map_err(CliError::runtime)?)
        }
        TrainSpec::Gaussian(cfg) => {
            SavedModel::Spectral(train_gaussian(&seqs, &cfg).map_err(CliError::runtime)?)
        }
        TrainSpec::Kernel(cfg) => {
            SavedModel::Kernel(train_kernel(&seqs, &cfg).map_err(CliError::runtime)?)
        }
    };
    save_json(out_path, &model).map_err(CliError::runtime)
}

fn prediction_header(width: usize, discrete: bool) -> Vec<String> {
    let mut header = vec!["seq_id".to_string(), "t".to_string()];
    match discrete {
        true => header.extend((0..width).map(|i| format!("p_{i}"))),
        false => header.extend((1..=width).map(|i| format!("mean_{i}"))),
    }
    header
}

/// Filters every sequence with a saved model and writes the one-step-ahead
/// predictions, one row per time step.
///
/// Discrete models emit the predicted symbol distribution, continuous ones
/// the predicted mean vector. `t` is 1-based to match the sequence files.
pub fn run_filter(model_path: &Path, data_path: &Path, out_path: &Path) -> CliResult<()> {
    let model: SavedModel = load_json(model_path).map_err(CliError::config)?;
    let seqs = read_sequences(data_path).map_err(CliError::config)?;

    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut width: Option<(usize, bool)> = None;
    let mut check_width = |w: usize, discrete: bool| -> CliResult<()> {
        match width {
            None => width = Some((w, discrete)),
            Some(prev) if prev != (w, discrete) => {
                return Err(CliError::Runtime("prediction shapes differ across sequences".into()))
            }
            _ => {}
        }
        Ok(())
    };
    for seq in &seqs {
        match &model {
            SavedModel::Spectral(m) => {
                let run = filter_sequence(m, seq).map_err(CliError::runtime)?;
                for pred in &run.predictions {
                    let (cells, discrete) = match (pred.distribution(), pred.mean()) {
                        (Some(d), _) => (d.iter().copied().collect::<Vec<f64>>(), true),
                        (None, Some(mean)) => (mean.iter().copied().collect(), false),
                        (None, None) => unreachable!("prediction is one of the two kinds"),
                    };
                    check_width(cells.len(), discrete)?;
                    rows.push((seq.id.clone(), cells));
                }
            }
            SavedModel::Kernel(m) => {
                let run = m.filter_sequence(seq).map_err(CliError::runtime)?;
                for pred in &run.predictions {
                    let (cells, discrete) = match (pred.distribution(), pred.mean()) {
                        (Some(d), _) => (d.iter().copied().collect::<Vec<f64>>(), true),
                        (None, Some(mean)) => (mean.iter().copied().collect(), false),
                        (None, None) => unreachable!("prediction is one of the two kinds"),
                    };
                    check_width(cells.len(), discrete)?;
                    rows.push((seq.id.clone(), cells));
                }
            }
        }
    }

    let (w, discrete) = width.ok_or_else(|| CliError::Config("no sequences to filter".into()))?;
    let header = prediction_header(w, discrete);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&file_hash(model_path)?, 0, &header_refs);
    let mut prev_id: Option<&str> = None;
    let mut t = 0usize;
    for (id, cells) in &rows {
        if prev_id != Some(id.as_str()) {
            prev_id = Some(id.as_str());
            t = 0;
        }
        t += 1;
        let mut row = vec![id.clone(), t.to_string()];
        row.extend(cells.iter().map(|&v| fmt_f64(v)));
        table.row(&row);
    }
    table.write(out_path)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model_hash: &'a str,
    warmup: usize,
    score: MaeScore,
}

/// Scores a saved model on binary sequences and writes the error summary.
pub fn run_evaluate(
    model_path: &Path,
    data_path: &Path,
    warmup: usize,
    out_path: &Path,
) -> CliResult<()> {
    let model: SavedModel = load_json(model_path).map_err(CliError::config)?;
    let seqs = read_sequences(data_path).map_err(CliError::config)?;
    if seqs.is_empty() {
        return Err(CliError::Config("no sequences to evaluate".into()));
    }
    let score = match &model {
        SavedModel::Spectral(m) => {
            score_binary_predictions(&seqs, warmup, |s| spectral_probabilities(m, s))?
        }
        SavedModel::Kernel(m) => score_binary_predictions(&seqs, warmup, |s| {
            let seq = ObservationSeq::discrete("score", s.to_vec())?;
            let run = m.filter_sequence(&seq)?;
            let mut probs = Vec::with_capacity(run.predictions.len());
            for pred in &run.predictions {
                let dist = pred.distribution().ok_or_else(|| {
                    psrlearn::Error::Param("binary scoring needs a discrete model".into())
                })?;
                probs.push(dist[1]);
            }
            Ok((probs, run.lost_track))
        })?,
    };
    write_json(
        out_path,
        &EvalOutput { model_hash: &file_hash(model_path)?, warmup, score },
    )
}
