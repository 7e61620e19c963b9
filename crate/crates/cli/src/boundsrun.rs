//! Coverage checks of the concentration bounds.
//!
//! Draws repeated empirical covariances from samplers with known population
//! covariance and counts how often the operator-norm deviation reaches the
//! bound. The configured grid crosses samplers with sample sizes; each cell
//! reports its violation rate against the nominal level plus binomial
//! noise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use psrlearn::bounds::{check_cov_coverage, CoverageReport, CoverageSampler};

use crate::artifacts::{ensure_dir, fmt_f64, write_metadata, Table};
use crate::config::{config_hash, BoundsExpConfig};
use crate::{CliError, CliResult};

/// One grid cell's coverage outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageCell {
    pub sampler: CoverageSampler,
    pub n: usize,
    pub report: CoverageReport,
}

/// Full grid outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsReport {
    pub config_hash: String,
    pub delta: f64,
    pub trials: usize,
    pub cells: Vec<CoverageCell>,
}

impl BoundsReport {
    /// Whether every cell's violation rate is within its threshold.
    pub fn all_passed(&self) -> bool {
        self.cells.iter().all(|c| c.report.passed())
    }
}

fn sampler_label(s: &CoverageSampler) -> String {
    match s {
        CoverageSampler::PointMass { dim } => format!("point_mass_{dim}"),
        CoverageSampler::SignedBasis { dim } => format!("signed_basis_{dim}"),
        CoverageSampler::UnboundedGaussian { dim } => format!("unbounded_gaussian_{dim}"),
    }
}

/// Runs the coverage grid in memory.
pub fn run_bounds(config: &BoundsExpConfig) -> CliResult<BoundsReport> {
    config.validate()?;
    let hash = config_hash(config);
    let mut cells = Vec::with_capacity(config.samplers.len() * config.ns.len());
    for sampler in &config.samplers {
        for &n in &config.ns {
            let report =
                check_cov_coverage(sampler, n, config.delta, config.trials, config.seed)
                    .map_err(CliError::config)?;
            cells.push(CoverageCell { sampler: sampler.clone(), n, report });
        }
    }
    Ok(BoundsReport { config_hash: hash, delta: config.delta, trials: config.trials, cells })
}

#[derive(Serialize)]
struct BoundsMetadata<'a> {
    config_hash: &'a str,
    seed: u64,
    delta: f64,
    trials: usize,
    all_passed: bool,
}

/// Runs the grid and writes `coverage.csv` and `metadata.json`.
pub fn run_bounds_to_dir(config: &BoundsExpConfig, dir: &Path) -> CliResult<BoundsReport> {
    let report = run_bounds(config)?;
    let dir = ensure_dir(dir)?;

    let mut table = Table::new(
        &report.config_hash,
        config.seed,
        &["sampler", "n", "delta", "trials", "bound", "violations", "rate", "threshold", "passed"],
    );
    for cell in &report.cells {
        table.row(&[
            sampler_label(&cell.sampler),
            cell.n.to_string(),
            fmt_f64(report.delta),
            report.trials.to_string(),
            fmt_f64(cell.report.bound),
            cell.report.violations.to_string(),
            fmt_f64(cell.report.rate),
            fmt_f64(cell.report.threshold),
            cell.report.passed().to_string(),
        ]);
    }
    table.write(dir.join("coverage.csv"))?;

    write_metadata(
        &dir,
        &BoundsMetadata {
            config_hash: &report.config_hash,
            seed: config.seed,
            delta: report.delta,
            trials: report.trials,
            all_passed: report.all_passed(),
        },
    )?;
    Ok(report)
}
