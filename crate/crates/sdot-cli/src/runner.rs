//! Monte-Carlo experiment execution.
//!
//! One experiment is a grid: regularization strengths on the outside,
//! then `replications x algorithms` solver runs per strength. Replication
//! `r` always consumes sample stream `r` of the base seed, so every
//! algorithm within a replication sees the same sample path (paired
//! comparisons) and the assignment of work to threads cannot change any
//! number. Rows are collected, sorted, and written from a single thread.
//!
//! Two CSVs share one schema per strength: `results.csv` leaves the wall
//! time column empty and is byte-reproducible; `timings.csv` fills it and
//! is inherently not. Aggregates use compensated summation over the sorted
//! rows, so they are independent of worker scheduling too.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use sdot_core::measures::SeededStream;
use sdot_core::numeric::NeumaierSum;
use sdot_core::solver::{run, AlgorithmConfig, RunSpec};

use crate::config::{ExperimentConfig, Instance};
use crate::truth::{g_star_for, TruthStore};
use crate::UsageError;

/// The fixed row schema shared by `results.csv` and `timings.csv`.
pub const CSV_HEADER: [&str; 8] = [
    "replication",
    "algorithm",
    "n",
    "wall_time_s",
    "w_hat",
    "sigma2_hat",
    "v_err_sq",
    "sbar_err_fro",
];

/// Residual tolerance for ground-truth solves backing the excess-risk
/// columns.
pub const RUN_TRUTH_TOL: f64 = 1e-9;
/// Sweep budget for those solves.
pub const RUN_TRUTH_MAX_ITER: usize = 500_000;

#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a> {
    pub out_dir: &'a Path,
    /// Ground-truth cache location; `None` solves in memory when needed.
    pub truth_path: Option<&'a Path>,
    /// Worker count; `None` falls back to `SDOT_THREADS`, then to one
    /// worker per CPU.
    pub threads: Option<usize>,
}

/// One output row, kept numeric until the CSVs are written.
#[derive(Debug, Clone)]
struct Row {
    replication: u32,
    algo_index: usize,
    algo_name: &'static str,
    n: u64,
    wall_time_s: f64,
    w_hat: Option<f64>,
    sigma2_hat: Option<f64>,
    v_err_sq: Option<f64>,
    sbar_err_fro: Option<f64>,
}

/// Per-strength ground truth, shared read-only by all jobs.
struct EpsTruth {
    w_eps: f64,
    v_star: DVector<f64>,
    /// Limit of the averaged Gauss-Newton matrix; only materialized when
    /// the config asks for preconditioner deviations.
    g_star: Option<DMatrix<f64>>,
}

/// Executes the full experiment described by `config`, writing one
/// directory per regularization strength plus a top-level manifest.
pub fn execute_run(config: &ExperimentConfig, opts: &RunOptions<'_>) -> Result<()> {
    config.validate()?;
    let instance = config.materialize()?;
    let pool = build_pool(opts.threads)?;

    let mut store = TruthStore::open(opts.truth_path)?;
    fs::create_dir_all(opts.out_dir)
        .with_context(|| format!("creating {}", opts.out_dir.display()))?;

    for &eps in &config.epsilons {
        let truth = resolve_truth(config, &instance, eps, &mut store)?;
        let rows = run_grid(config, &instance, eps, truth.as_ref(), &pool)?;
        let eps_dir = opts.out_dir.join(format!("eps_{eps}"));
        fs::create_dir_all(&eps_dir)
            .with_context(|| format!("creating {}", eps_dir.display()))?;
        write_csv(&eps_dir.join("results.csv"), &rows, false)?;
        write_csv(&eps_dir.join("timings.csv"), &rows, true)?;
        print_aggregates(config, eps, truth.as_ref(), &rows);
    }
    store.save()?;

    write_manifest(config, &opts.out_dir.join("manifest.json"))?;
    Ok(())
}

fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let count = match threads {
        Some(n) => Some(n),
        None => match std::env::var("SDOT_THREADS") {
            Ok(s) => Some(s.parse::<usize>().map_err(|_| {
                UsageError::new(format!("SDOT_THREADS must be a thread count, got {s:?}"))
            })?),
            Err(_) => None,
        },
    };
    if count == Some(0) {
        bail!(UsageError::new("thread count must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(count.unwrap_or(0))
        .build()
        .context("building worker pool")
}

/// Solves (or loads) the optimum for one strength. Continuous sources
/// have no dense ground truth; their error columns stay empty.
fn resolve_truth(
    config: &ExperimentConfig,
    instance: &Instance,
    eps: f64,
    store: &mut TruthStore,
) -> Result<Option<EpsTruth>> {
    let Some(src) = instance.source.as_discrete() else {
        return Ok(None);
    };
    let (entry, _) = store
        .get_or_solve(src, &instance.target, instance.kind, eps, RUN_TRUTH_TOL, RUN_TRUTH_MAX_ITER)
        .with_context(|| format!("ground truth for eps = {eps}"))?;
    let needs_g_star = config.record_sbar
        && config.algorithms.iter().any(|a| a.name() == "sgn");
    let g_star = if needs_g_star {
        Some(g_star_for(&entry, src, &instance.target, instance.kind)?)
    } else {
        None
    };
    Ok(Some(EpsTruth {
        w_eps: entry.w_eps,
        v_star: DVector::from_vec(entry.v_star.clone()),
        g_star,
    }))
}

/// Runs every (replication, algorithm) pair for one strength and returns
/// the snapshot rows sorted by (replication, n, algorithm order).
fn run_grid(
    config: &ExperimentConfig,
    instance: &Instance,
    eps: f64,
    truth: Option<&EpsTruth>,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Row>> {
    let min_weight = instance.target.min_weight();
    let mut algorithms: Vec<(&'static str, AlgorithmConfig)> = Vec::new();
    for spec in &config.algorithms {
        algorithms.push((spec.name(), spec.resolve(eps, min_weight)?));
    }

    let jobs: Vec<(u32, usize)> = (0..config.replications)
        .flat_map(|rep| (0..algorithms.len()).map(move |a| (rep, a)))
        .collect();

    let per_job: Result<Vec<Vec<Row>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(rep, algo_index)| {
                run_job(config, instance, eps, &algorithms[algo_index], algo_index, rep, truth)
            })
            .collect()
    });

    let mut rows: Vec<Row> = per_job?.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.replication, a.n, a.algo_index).cmp(&(b.replication, b.n, b.algo_index))
    });
    Ok(rows)
}

fn run_job(
    config: &ExperimentConfig,
    instance: &Instance,
    eps: f64,
    algorithm: &(&'static str, AlgorithmConfig),
    algo_index: usize,
    rep: u32,
    truth: Option<&EpsTruth>,
) -> Result<Vec<Row>> {
    let (algo_name, algo_config) = algorithm;
    let record_sbar = config.record_sbar && matches!(algo_config, AlgorithmConfig::Sgn(_));
    let spec = RunSpec {
        algorithm: *algo_config,
        eps,
        n_max: config.n_max,
        snapshots: &config.snapshots,
        record_sbar,
    };
    let stream = SeededStream::new(config.seed, rep as u64);
    let start = Instant::now();
    let mut clock = || start.elapsed().as_secs_f64();
    let snapshots = run(&spec, &instance.source, &instance.target, instance.kind, stream, &mut clock)
        .with_context(|| {
            format!(
                "replication {rep} of {algo_name} at eps = {eps} failed \
                 (base seed {}, sample stream {rep})",
                config.seed
            )
        })?;

    let rows = snapshots
        .into_iter()
        .map(|snap| {
            let v_err_sq = truth.map(|t| (&snap.v - &t.v_star).norm_squared());
            let sbar_err_fro = match (&snap.sbar, truth.and_then(|t| t.g_star.as_ref())) {
                (Some(sbar), Some(g_star)) => Some((sbar - g_star).norm()),
                _ => None,
            };
            Row {
                replication: rep,
                algo_index,
                algo_name,
                n: snap.n,
                wall_time_s: snap.wall_time_s,
                w_hat: snap.w_hat,
                sigma2_hat: snap.sigma2_hat,
                v_err_sq,
                sbar_err_fro,
            }
        })
        .collect();
    Ok(rows)
}

fn opt_field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, rows: &[Row], with_wall: bool) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(CSV_HEADER)?;
    for row in rows {
        let wall = if with_wall { row.wall_time_s.to_string() } else { String::new() };
        writer.write_record([
            row.replication.to_string(),
            row.algo_name.to_string(),
            row.n.to_string(),
            wall,
            opt_field(row.w_hat),
            opt_field(row.sigma2_hat),
            opt_field(row.v_err_sq),
            opt_field(row.sbar_err_fro),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Across-replication mean of one optional column at one (algorithm, n)
/// cell. Compensated, and empty unless every replication reported it.
fn column_mean(
    rows: &[Row],
    algo_index: usize,
    n: u64,
    reps: u32,
    pick: impl Fn(&Row) -> Option<f64>,
) -> Option<f64> {
    let mut sum = NeumaierSum::new();
    let mut count = 0u32;
    for row in rows {
        if row.algo_index == algo_index && row.n == n {
            sum.add(pick(row)?);
            count += 1;
        }
    }
    (count == reps).then(|| sum.value() / f64::from(reps))
}

fn fmt_mean(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".to_string())
}

/// Prints the per-snapshot aggregate table for one strength to stdout.
fn print_aggregates(
    config: &ExperimentConfig,
    eps: f64,
    truth: Option<&EpsTruth>,
    rows: &[Row],
) {
    let reps = config.replications;
    println!("eps = {eps} ({reps} replications)");
    println!("  {:<10} {:>10} {:>14} {:>14} {:>14} {:>14}",
        "algorithm", "n", "mean|W^-W|", "mean w^", "mean|v-v*|^2", "mean wall s");
    let mut cells: Vec<(usize, &'static str, u64)> = Vec::new();
    for row in rows {
        let cell = (row.algo_index, row.algo_name, row.n);
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    cells.sort();
    for (algo_index, algo_name, n) in cells {
        let mean_w = column_mean(rows, algo_index, n, reps, |r| r.w_hat);
        let mean_abs_err = truth.and_then(|t| {
            column_mean(rows, algo_index, n, reps, |r| {
                r.w_hat.map(|w| (w - t.w_eps).abs())
            })
        });
        let mean_v_err = column_mean(rows, algo_index, n, reps, |r| r.v_err_sq);
        let mean_wall = column_mean(rows, algo_index, n, reps, |r| Some(r.wall_time_s));
        println!(
            "  {:<10} {:>10} {:>14} {:>14} {:>14} {:>14}",
            algo_name,
            n,
            fmt_mean(mean_abs_err),
            fmt_mean(mean_w),
            fmt_mean(mean_v_err),
            fmt_mean(mean_wall),
        );
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    config_sha256: String,
    seed: u64,
    versions: ManifestVersions,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct ManifestVersions {
    sdot_cli: &'static str,
    sdot_core: &'static str,
}

/// Hash of the effective config's canonical JSON serialization.
pub fn config_sha256(config: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}

/// Writes the run manifest. It embeds the effective config (seed and
/// snapshot overrides already applied), so feeding the manifest back as
/// `--config` replays the experiment; worker count is deliberately not
/// recorded because it cannot affect any output byte.
fn write_manifest(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let manifest = Manifest {
        schema_version: crate::config::SCHEMA_VERSION,
        config_sha256: config_sha256(config)?,
        seed: config.seed,
        versions: ManifestVersions {
            sdot_cli: env!("CARGO_PKG_VERSION"),
            sdot_core: sdot_core::VERSION,
        },
        config,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Returns the per-strength output directory used by [`execute_run`].
pub fn eps_dir(out_dir: &Path, eps: f64) -> PathBuf {
    out_dir.join(format!("eps_{eps}"))
}
