//! Prediction error against training set size on a known chain.
//!
//! Trains the discrete pipeline at a grid of sample sizes, several seeds
//! per size, and scores each fit by the mean L1 distance between its
//! one-step-ahead distributions and the true ones on a shared held-out
//! sequence. The medians over seeds trace the convergence curve.

use std::path::Path;

use serde::Serialize;

use psrlearn::bounds::{convergence_curve, ConvergenceConfig, ConvergenceTable};
use psrlearn::features::FeatureSpec;
use psrlearn::regress::RegressorSpec;
use psrlearn::seqdata::random_hmm;
use psrlearn::twostage::DiscreteTrainConfig;

use crate::artifacts::{ensure_dir, fmt_f64, write_metadata, Table};
use crate::config::{config_hash, ConvergenceExpConfig};
use crate::{CliError, CliResult};

/// Expands the experiment config into the sweep inputs.
pub fn resolve(config: &ConvergenceExpConfig) -> CliResult<ConvergenceConfig> {
    config.validate()?;
    let params = match &config.params {
        Some(p) => p.clone(),
        None => random_hmm(config.generator.n_states, config.generator.n_obs, config.generator.seed)
            .map_err(CliError::config)?,
    };
    let train = match &config.train {
        Some(t) => t.clone(),
        None => {
            let mut cfg = DiscreteTrainConfig::new(
                FeatureSpec::discrete_indicator(params.n_obs()),
                RegressorSpec::ols(),
            );
            cfg.rank = Some(params.n_states());
            cfg
        }
    };
    Ok(ConvergenceConfig {
        params,
        n_grid: config.n_grid.clone(),
        seeds: config.seeds.clone(),
        train,
        eval_len: config.eval_len,
        eval_seed: config.eval_seed,
    })
}

/// Runs the sweep in memory.
pub fn run_convergence(config: &ConvergenceExpConfig) -> CliResult<ConvergenceTable> {
    let resolved = resolve(config)?;
    convergence_curve(&resolved).map_err(CliError::runtime)
}

#[derive(Serialize)]
struct ConvergenceMetadata<'a> {
    config_hash: &'a str,
    eval_seed: u64,
    n_grid: &'a [usize],
    seeds: &'a [u64],
    medians: Vec<(usize, Option<f64>)>,
    n_failed_cells: usize,
}

/// Runs the sweep and writes `convergence.csv`, `medians.csv`, and
/// `metadata.json`.
pub fn run_convergence_to_dir(
    config: &ConvergenceExpConfig,
    dir: &Path,
) -> CliResult<ConvergenceTable> {
    let table = run_convergence(config)?;
    let hash = config_hash(config);
    let dir = ensure_dir(dir)?;
    let seed = config.eval_seed;

    let mut cells = Table::new(&hash, seed, &["n", "seed", "l1_error", "failure"]);
    for cell in &table.cells {
        cells.row(&[
            cell.n.to_string(),
            cell.seed.to_string(),
            cell.error.map(fmt_f64).unwrap_or_default(),
            cell.failure.clone().unwrap_or_default(),
        ]);
    }
    cells.write(dir.join("convergence.csv"))?;

    let medians = table.median_errors(&config.n_grid);
    let mut med = Table::new(&hash, seed, &["n", "median_l1_error"]);
    for (n, m) in &medians {
        med.row(&[n.to_string(), m.map(fmt_f64).unwrap_or_default()]);
    }
    med.write(dir.join("medians.csv"))?;

    write_metadata(
        &dir,
        &ConvergenceMetadata {
            config_hash: &hash,
            eval_seed: seed,
            n_grid: &config.n_grid,
            seeds: &config.seeds,
            medians,
            n_failed_cells: table.cells.iter().filter(|c| c.failure.is_some()).count(),
        },
    )?;
    Ok(table)
}
