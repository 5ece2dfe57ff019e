//! `sdot`: config-driven Monte-Carlo experiments for stochastic
//! semi-dual transport solvers.
//!
//! Subcommands: `run` (the experiment grid), `sinkhorn` (ground-truth
//! cache maintenance), `check` (diagnostic inequality suite), `normality`
//! (studentized terminal estimates), `version`. Exit codes: 0 success,
//! 1 failure (including failed checks), 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use sdot_cli::checks::{execute_check, CheckOptions};
use sdot_cli::config::{load_config, ExperimentConfig};
use sdot_cli::normality::{execute_normality, NormalityOptions};
use sdot_cli::runner::{execute_run, RunOptions};
use sdot_cli::truth::{instance_hash, TruthStore};
use sdot_cli::{is_usage_error, UsageError};

#[derive(Parser)]
#[command(
    name = "sdot",
    version,
    about = "Stochastic semi-dual solvers for entropic semi-discrete optimal transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every config-consuming subcommand.
#[derive(Args)]
struct ConfigArgs {
    /// Experiment config JSON; a manifest written by `run` works too.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the snapshot schedule, e.g. "1e2,1e3,1e4".
    #[arg(long)]
    snapshots: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = load_config(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(raw) = &self.snapshots {
            config.snapshots = parse_snapshots(raw)?;
            config.validate()?;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured Monte-Carlo experiment; write CSVs + manifest.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (default: the config's `out`, then "out").
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: SDOT_THREADS, then one per CPU).
        #[arg(long)]
        threads: Option<usize>,
        /// Ground-truth cache file, read and updated.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Solve the dense ground truth for every configured strength.
    Sinkhorn {
        #[command(flatten)]
        config: ConfigArgs,
        /// Ground-truth cache file, read and updated.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Marginal residual tolerance.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Sweep budget per solve.
        #[arg(long, default_value_t = 500_000)]
        max_iter: usize,
    },
    /// Run the diagnostic inequality suite; exit 1 if anything fails.
    Check {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory for diagnostics.json (default as for `run`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground-truth cache file, read and updated.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Evaluation points per strength.
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Studentize terminal cost estimates of a finished run.
    Normality {
        #[command(flatten)]
        config: ConfigArgs,
        /// A results.csv written by `run`.
        #[arg(long)]
        results: PathBuf,
        /// Regularization strength the file belongs to.
        #[arg(long)]
        eps: f64,
        /// Algorithm name as recorded in the CSV.
        #[arg(long)]
        algorithm: String,
        /// Snapshot to studentize (default: the last one present).
        #[arg(long)]
        n: Option<u64>,
        /// Histogram bin count.
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Directory for histogram.csv and normality.json
        /// (default: next to the results file).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground-truth cache file, read and updated.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Print the version.
    Version,
}

fn parse_snapshots(raw: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let x: f64 = part
            .parse()
            .map_err(|_| UsageError::new(format!("snapshot {part:?} is not a number")))?;
        if !(x.is_finite() && x >= 1.0 && x <= 2f64.powi(53)) {
            bail!(UsageError::new(format!("snapshot {part:?} is out of range")));
        }
        if (x - x.round()).abs() > 1e-9 {
            bail!(UsageError::new(format!("snapshot {part:?} is not a whole number")));
        }
        out.push(x.round() as u64);
    }
    if out.is_empty() {
        bail!(UsageError::new("the snapshot list is empty"));
    }
    Ok(out)
}

fn out_dir_of(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run_sinkhorn(
    config: &ExperimentConfig,
    truth: Option<&std::path::Path>,
    tol: f64,
    max_iter: usize,
) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        bail!(UsageError::new("tolerance must be positive"));
    }
    config.validate()?;
    let instance = config.materialize()?;
    let Some(source) = instance.source.as_discrete() else {
        bail!(UsageError::new(
            "sinkhorn needs a finitely supported source; continuous sources \
             have no dense ground truth"
        ));
    };
    let mut store = TruthStore::open(truth)?;
    for &eps in &config.epsilons {
        let hash = instance_hash(source, &instance.target, instance.kind, eps);
        let (entry, solved) =
            store.get_or_solve(source, &instance.target, instance.kind, eps, tol, max_iter)?;
        println!(
            "eps = {eps}: W_eps = {:.12e}, residual = {:.3e} ({}) [{}]",
            entry.w_eps,
            entry.residual,
            if solved { "solved" } else { "cached" },
            &hash[..12],
        );
    }
    store.save()?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, threads, truth } => {
            let config = config.load()?;
            let out_dir = out_dir_of(out, &config);
            execute_run(
                &config,
                &RunOptions {
                    out_dir: &out_dir,
                    truth_path: truth.as_deref(),
                    threads,
                },
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sinkhorn { config, truth, tol, max_iter } => {
            let config = config.load()?;
            run_sinkhorn(&config, truth.as_deref(), tol, max_iter)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { config, out, truth, points } => {
            let config = config.load()?;
            let out_dir = out_dir_of(out, &config);
            let pass = execute_check(
                &config,
                &CheckOptions {
                    out_dir: &out_dir,
                    truth_path: truth.as_deref(),
                    points,
                },
            )?;
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Normality {
            config,
            results,
            eps,
            algorithm,
            n,
            bins,
            out,
            truth,
        } => {
            let config = config.load()?;
            let out_dir = out
                .or_else(|| results.parent().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            execute_normality(
                &config,
                &NormalityOptions {
                    results: &results,
                    eps,
                    algorithm: &algorithm,
                    n,
                    bins,
                    out_dir: &out_dir,
                    truth_path: truth.as_deref(),
                },
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Version => {
            println!("{}", env!("CARGO_PKG_VERSION"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_usage_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
