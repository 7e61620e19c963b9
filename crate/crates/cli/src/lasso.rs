//! Subsystem discovery on block-structured linear system data.
//!
//! The generator couples disjoint groups of observation coordinates to
//! independent latent subsystems, with extra coordinates carrying pure
//! noise. Two candidate state bases are compared on how well their leading
//! vectors concentrate on a single coordinate block: the left singular
//! vectors of the one-step cross-covariance, and the left singular vectors
//! of a sparse (L1-penalized) regression from past to future observations.
//! Sparsity suppresses the noise coordinates, so its basis should separate
//! the blocks more cleanly.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use psrlearn::features::{extract_triplets, learn_basis, Basis, FeatureSpec};
use psrlearn::regress::fit_lasso;
use psrlearn::seqdata::{make_subsystem_lds, sample_lds};

use crate::artifacts::{ensure_dir, fmt_f64, write_metadata, Table};
use crate::config::{config_hash, LassoConfig};
use crate::{CliError, CliResult};

/// Mass statistics of one basis vector over the coordinate blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorStats {
    /// Rank by singular value, 0 first.
    pub sv_rank: usize,
    pub singular_value: f64,
    /// Mean coordinate under the absolute values read as a distribution.
    pub mean_coordinate: f64,
    /// Largest fraction of absolute mass inside any one subsystem block.
    pub block_mass: f64,
    /// Fraction of absolute mass on the pure-noise coordinates.
    pub noise_mass: f64,
    pub entries: Vec<f64>,
}

/// One seed's pair of decompositions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub covariance: Vec<VectorStats>,
    pub lasso: Vec<VectorStats>,
    /// Output coordinates whose sparse regression did not converge.
    pub unconverged_columns: Vec<usize>,
}

/// Aggregates over seeds and vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LassoReport {
    pub config_hash: String,
    pub seeds: Vec<SeedResult>,
    pub mean_block_mass_covariance: f64,
    pub mean_block_mass_lasso: f64,
    pub mean_noise_mass_lasso: f64,
}

/// Absolute-mass statistics of each basis column.
///
/// Blocks are the contiguous groups of observed coordinates driven by one
/// subsystem; the trailing `noise_rows` coordinates belong to none.
pub fn vector_stats(
    basis: &Basis,
    obs_rows_per_subsystem: usize,
    n_subsystems: usize,
) -> Vec<VectorStats> {
    let d = basis.u.nrows();
    let noise_start = obs_rows_per_subsystem * n_subsystems;
    (0..basis.u.ncols())
        .map(|j| {
            let col = basis.u.column(j);
            let abs: Vec<f64> = col.iter().map(|v| v.abs()).collect();
            let total: f64 = abs.iter().sum();
            let mean_coordinate = if total > 0.0 {
                abs.iter().enumerate().map(|(i, a)| i as f64 * a).sum::<f64>() / total
            } else {
                0.0
            };
            let block_mass = (0..n_subsystems)
                .map(|b| {
                    let start = b * obs_rows_per_subsystem;
                    abs[start..start + obs_rows_per_subsystem].iter().sum::<f64>()
                })
                .fold(0.0f64, f64::max)
                / total.max(f64::MIN_POSITIVE);
            let noise_mass = abs[noise_start..d].iter().sum::<f64>() / total.max(f64::MIN_POSITIVE);
            VectorStats {
                sv_rank: j,
                singular_value: basis.singular_values[j],
                mean_coordinate,
                block_mass,
                noise_mass,
                entries: col.iter().copied().collect(),
            }
        })
        .collect()
}

fn run_seed(config: &LassoConfig, seed: u64) -> CliResult<SeedResult> {
    let params = make_subsystem_lds(&config.system, seed).map_err(CliError::runtime)?;
    // the trajectory gets its own stream so it shares nothing with the
    // system draw
    let data_seed = seed.wrapping_add(0x5eed_0ff5);
    let (seq, _meta) =
        sample_lds(&params, config.train_len, data_seed).map_err(CliError::runtime)?;

    let d = config.system.obs_dim();
    let mut spec = FeatureSpec::stacked_window(d, 1, 1);
    spec.min_seq_len = 3;
    let data = extract_triplets(std::slice::from_ref(&seq), &spec).map_err(CliError::runtime)?;

    // plain basis: left singular vectors of the past/future cross-covariance
    let n = data.n() as f64;
    let cross = (data.psi.transpose() * &data.h).scale(1.0 / n);
    let cov_basis = learn_basis(&cross, config.top_k).map_err(CliError::runtime)?;

    // sparse basis: left singular vectors of the L1-penalized regression
    // weights, fit one output coordinate at a time so convergence is
    // reported per column
    let mut weights = DMatrix::zeros(d, d);
    let mut unconverged_columns = Vec::new();
    for j in 0..d {
        let y = DMatrix::from_column_slice(data.psi.nrows(), 1, data.psi.column(j).as_slice());
        let fit = fit_lasso(&data.h, &y, config.alpha, 10_000, 1e-6).map_err(CliError::runtime)?;
        weights.row_mut(j).copy_from(&fit.weights.row(0));
        if !fit.converged {
            unconverged_columns.push(j);
        }
    }
    let lasso_basis = learn_basis(&weights, config.top_k).map_err(CliError::runtime)?;

    let rows = config.system.obs_rows_per_subsystem;
    let blocks = config.system.n_subsystems;
    Ok(SeedResult {
        seed,
        covariance: vector_stats(&cov_basis, rows, blocks),
        lasso: vector_stats(&lasso_basis, rows, blocks),
        unconverged_columns,
    })
}

/// Runs every seed and aggregates block-mass means over the kept vectors.
pub fn run_lasso_subsystems(config: &LassoConfig) -> CliResult<LassoReport> {
    config.validate()?;
    let hash = config_hash(config);
    let seeds: Vec<SeedResult> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed))
        .collect::<CliResult<Vec<_>>>()?;

    let mean = |pick: fn(&SeedResult) -> &Vec<VectorStats>, field: fn(&VectorStats) -> f64| {
        let vals: Vec<f64> =
            seeds.iter().flat_map(|s| pick(s).iter().map(field)).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    Ok(LassoReport {
        config_hash: hash,
        mean_block_mass_covariance: mean(|s| &s.covariance, |v| v.block_mass),
        mean_block_mass_lasso: mean(|s| &s.lasso, |v| v.block_mass),
        mean_noise_mass_lasso: mean(|s| &s.lasso, |v| v.noise_mass),
        seeds,
    })
}

#[derive(Serialize)]
struct LassoMetadata<'a> {
    config_hash: &'a str,
    seeds: Vec<u64>,
    mean_block_mass_covariance: f64,
    mean_block_mass_lasso: f64,
    mean_noise_mass_lasso: f64,
    unconverged: Vec<(u64, Vec<usize>)>,
}

/// Runs the experiment and writes `basis_vectors.csv`, `summary.csv`, and
/// `metadata.json`.
pub fn run_lasso_to_dir(config: &LassoConfig, dir: &Path) -> CliResult<LassoReport> {
    let report = run_lasso_subsystems(config)?;
    let dir = ensure_dir(dir)?;
    let seed = config.seeds[0];

    let d = config.system.obs_dim();
    let mut header: Vec<String> = [
        "seed",
        "basis",
        "plot_order",
        "sv_rank",
        "singular_value",
        "mean_coordinate",
        "block_mass",
        "noise_mass",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=d).map(|i| format!("v_{i}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&report.config_hash, seed, &header_refs);

    for seed_result in &report.seeds {
        for (basis_name, stats) in
            [("covariance", &seed_result.covariance), ("lasso", &seed_result.lasso)]
        {
            // plot order: ascending mean coordinate, the layout used to
            // visualize block separation
            let mut order: Vec<usize> = (0..stats.len()).collect();
            order.sort_by(|&a, &b| {
                stats[a].mean_coordinate.total_cmp(&stats[b].mean_coordinate)
            });
            for (plot_order, &idx) in order.iter().enumerate() {
                let v = &stats[idx];
                let mut row = vec![
                    seed_result.seed.to_string(),
                    basis_name.to_string(),
                    plot_order.to_string(),
                    v.sv_rank.to_string(),
                    fmt_f64(v.singular_value),
                    fmt_f64(v.mean_coordinate),
                    fmt_f64(v.block_mass),
                    fmt_f64(v.noise_mass),
                ];
                row.extend(v.entries.iter().map(|&e| fmt_f64(e)));
                table.row(&row);
            }
        }
    }
    table.write(dir.join("basis_vectors.csv"))?;

    let mut summary = Table::new(
        &report.config_hash,
        seed,
        &["basis", "mean_block_mass", "mean_noise_mass"],
    );
    let noise_cov = report
        .seeds
        .iter()
        .flat_map(|s| s.covariance.iter().map(|v| v.noise_mass))
        .sum::<f64>()
        / (report.seeds.len() * config.top_k) as f64;
    summary.row(&[
        "covariance".into(),
        fmt_f64(report.mean_block_mass_covariance),
        fmt_f64(noise_cov),
    ]);
    summary.row(&[
        "lasso".into(),
        fmt_f64(report.mean_block_mass_lasso),
        fmt_f64(report.mean_noise_mass_lasso),
    ]);
    summary.write(dir.join("summary.csv"))?;

    write_metadata(
        &dir,
        &LassoMetadata {
            config_hash: &report.config_hash,
            seeds: config.seeds.clone(),
            mean_block_mass_covariance: report.mean_block_mass_covariance,
            mean_block_mass_lasso: report.mean_block_mass_lasso,
            mean_noise_mass_lasso: report.mean_noise_mass_lasso,
            unconverged: report
                .seeds
                .iter()
                .filter(|s| !s.unconverged_columns.is_empty())
                .map(|s| (s.seed, s.unconverged_columns.clone()))
                .collect(),
        },
    )?;
    Ok(report)
}
