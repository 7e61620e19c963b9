//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on configuration or argument errors
//! (including unknown flags, which print usage), 2 on runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use psrlearn_cli::boundsrun::{run_bounds_to_dir, BoundsReport};
use psrlearn_cli::commands::{run_evaluate, run_filter, run_generate, run_train, GenerateArgs, GenerateSystem};
use psrlearn_cli::config::{BoundsExpConfig, ExperimentConfig};
use psrlearn_cli::{CliError, CliResult};

use psrlearn::bounds::CoverageSampler;
use psrlearn::seqdata::load_json;

#[derive(Parser)]
#[command(name = "psrlearn", version, about = "Predictive state model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate {
        /// Which system to sample.
        #[arg(long, value_enum)]
        system: GenerateSystem,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Pool size (binary response pool only).
        #[arg(long)]
        n_seqs: Option<usize>,
        /// Minimum sequence length (binary response pool only).
        #[arg(long)]
        len_min: Option<usize>,
        /// Maximum sequence length (binary response pool only).
        #[arg(long)]
        len_max: Option<usize>,
        /// Trajectory length (linear system only).
        #[arg(long)]
        len: Option<usize>,
    },
    /// Train a model from a JSON task spec and a sequence CSV.
    Train {
        /// Task spec document, tagged `discrete`, `gaussian`, or `kernel`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output model document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a trained model's one-step-ahead predictions on a dataset.
    Filter {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model on binary sequences.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Steps excluded at the head of each sequence.
        #[arg(long, default_value_t = 4)]
        warmup: usize,
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configured experiment.
    Experiment(ExperimentArgs),
    /// Check Monte Carlo coverage of the covariance bound.
    Bounds {
        /// Sampler preset.
        #[arg(long, value_enum)]
        preset: BoundsPreset,
        /// Sampler dimension.
        #[arg(long, default_value_t = 4)]
        dim: usize,
        /// Samples per empirical covariance.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Nominal failure level of the bound.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; reports to stdout only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment id; must match the config's `experiment` tag.
    id: String,
    /// Experiment config document.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum BoundsPreset {
    /// Deterministic single point; the bound can never be violated.
    PointMass,
    /// Uniform over signed basis vectors.
    BasisUniform,
    /// Standard Gaussian; rejected, the bound needs bounded vectors.
    Gaussian,
}

fn run_experiment(args: &ExperimentArgs) -> CliResult<()> {
    let config: ExperimentConfig = load_json(&args.config).map_err(CliError::config)?;
    config.validate()?;
    let tag = match &config {
        ExperimentConfig::Bkt(_) => "bkt",
        ExperimentConfig::LassoSubsystems(_) => "lasso_subsystems",
        ExperimentConfig::Convergence(_) => "convergence",
        ExperimentConfig::Bounds(_) => "bounds",
    };
    if args.id != tag {
        return Err(CliError::Config(format!(
            "requested experiment {} but the config is tagged {tag}",
            args.id
        )));
    }
    let dir = args
        .out
        .clone()
        .or_else(|| config.output_dir().cloned())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?;
    match &config {
        ExperimentConfig::Bkt(c) => {
            let report = psrlearn_cli::bkt::run_bkt_to_dir(c, &dir)?;
            for s in &report.summaries {
                println!(
                    "{}: mean MAE {:.4}, relative fit time {:.2}",
                    s.name, s.mean_mae_pooled, s.relative_fit_time
                );
            }
        }
        ExperimentConfig::LassoSubsystems(c) => {
            let report = psrlearn_cli::lasso::run_lasso_to_dir(c, &dir)?;
            println!(
                "mean block mass: covariance {:.4}, sparse {:.4}",
                report.mean_block_mass_covariance, report.mean_block_mass_lasso
            );
        }
        ExperimentConfig::Convergence(c) => {
            let table = psrlearn_cli::convergence::run_convergence_to_dir(c, &dir)?;
            for (n, m) in table.median_errors(&c.n_grid) {
                match m {
                    Some(m) => println!("n={n}: median L1 {m:.4}"),
                    None => println!("n={n}: all seeds failed"),
                }
            }
        }
        ExperimentConfig::Bounds(c) => {
            let report = run_bounds_to_dir(c, &dir)?;
            print_bounds_report(&report);
        }
    }
    Ok(())
}

fn print_bounds_report(report: &BoundsReport) {
    for cell in &report.cells {
        println!(
            "{:?} n={}: rate {:.4} vs threshold {:.4} -> {}",
            cell.sampler,
            cell.n,
            cell.report.rate,
            cell.report.threshold,
            if cell.report.passed() { "ok" } else { "VIOLATED" }
        );
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { system, seed, out, n_seqs, len_min, len_max, len } => {
            let len_range = match (len_min, len_max) {
                (None, None) => None,
                (lo, hi) => Some((lo.unwrap_or(5), hi.unwrap_or(50))),
            };
            run_generate(&GenerateArgs { system, seed, n_seqs, len_range, len }, &out)
        }
        Command::Train { spec, data, out } => run_train(&spec, &data, &out),
        Command::Filter { model, data, out } => run_filter(&model, &data, &out),
        Command::Evaluate { model, data, warmup, out } => {
            run_evaluate(&model, &data, warmup, &out)
        }
        Command::Experiment(args) => run_experiment(&args),
        Command::Bounds { preset, dim, n, delta, trials, seed, out } => {
            let sampler = match preset {
                BoundsPreset::PointMass => CoverageSampler::PointMass { dim },
                BoundsPreset::BasisUniform => CoverageSampler::SignedBasis { dim },
                BoundsPreset::Gaussian => CoverageSampler::UnboundedGaussian { dim },
            };
            let config = BoundsExpConfig {
                samplers: vec![sampler],
                ns: vec![n],
                delta,
                trials,
                seed,
                output_dir: None,
            };
            let report = match out {
                Some(dir) => run_bounds_to_dir(&config, &dir)?,
                None => psrlearn_cli::boundsrun::run_bounds(&config)?,
            };
            print_bounds_report(&report);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are successes; anything else is an
            // argument error and exits 1 with the usage text
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
