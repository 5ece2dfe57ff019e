//! Normality post-processing: turns the terminal cost estimates of a
//! replicated run into studentized values
//! `sqrt(n) (W_n - W_eps) / sigma_n`, then summarizes them against the
//! standard normal (moments, Kolmogorov-Smirnov distance, histogram).
//!
//! This reads `results.csv` back rather than rerunning anything, so it can
//! be pointed at any finished experiment directory; only the centering
//! constant `W_eps` needs the instance, which is why the config is loaded
//! here at all.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use sdot_core::estimators::{normality_stats, NormalitySummary};

use crate::config::ExperimentConfig;
use crate::runner::{CSV_HEADER, RUN_TRUTH_MAX_ITER, RUN_TRUTH_TOL};
use crate::truth::TruthStore;
use crate::UsageError;

#[derive(Debug, Clone, Copy)]
pub struct NormalityOptions<'a> {
    /// A `results.csv` written by the runner.
    pub results: &'a Path,
    /// Strength whose rows to read; must match one of the config's values.
    pub eps: f64,
    /// Algorithm name as it appears in the CSV (`sgd`, `adam`, `sgn`, `sn`).
    pub algorithm: &'a str,
    /// Snapshot to studentize; defaults to the last one present.
    pub n: Option<u64>,
    pub bins: usize,
    pub out_dir: &'a Path,
    pub truth_path: Option<&'a Path>,
}

/// JSON summary written next to the histogram.
#[derive(Debug, Serialize)]
pub struct NormalityReport {
    pub algorithm: String,
    pub eps: f64,
    pub n: u64,
    pub w_eps: f64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub ks_stat: f64,
}

struct TerminalRow {
    w_hat: f64,
    sigma2_hat: f64,
}

pub fn execute_normality(
    config: &ExperimentConfig,
    opts: &NormalityOptions<'_>,
) -> Result<NormalitySummary> {
    config.validate()?;
    let instance = config.materialize()?;
    let Some(source) = instance.source.as_discrete() else {
        bail!(UsageError::new(
            "normality needs a finitely supported source: the studentized \
             statistic is centered at the exact cost, which has no dense \
             solve for continuous sources"
        ));
    };
    if !config.epsilons.iter().any(|&e| e == opts.eps) {
        bail!(UsageError::new(format!(
            "eps = {} is not one of the config's strengths",
            opts.eps
        )));
    }

    let mut store = TruthStore::open(opts.truth_path)?;
    let (entry, _) = store
        .get_or_solve(
            source,
            &instance.target,
            instance.kind,
            opts.eps,
            RUN_TRUTH_TOL,
            RUN_TRUTH_MAX_ITER,
        )
        .with_context(|| format!("ground truth for eps = {}", opts.eps))?;
    store.save()?;

    let (n, rows) = read_terminal_rows(opts.results, opts.algorithm, opts.n)?;
    let mut values = Vec::with_capacity(rows.len());
    for row in &rows {
        if row.sigma2_hat <= 0.0 {
            bail!(
                "a replication reported zero score variance at n = {n}; \
                 the studentized statistic is undefined for it"
            );
        }
        let scale = (n as f64).sqrt() / row.sigma2_hat.sqrt();
        values.push(scale * (row.w_hat - entry.w_eps));
    }

    let summary = normality_stats(&values, opts.bins)
        .context("summarizing the studentized values")?;

    fs::create_dir_all(opts.out_dir)
        .with_context(|| format!("creating {}", opts.out_dir.display()))?;
    write_histogram(&opts.out_dir.join("histogram.csv"), &summary)?;
    let report = NormalityReport {
        algorithm: opts.algorithm.to_string(),
        eps: opts.eps,
        n,
        w_eps: entry.w_eps,
        count: summary.count,
        mean: summary.mean,
        std: summary.std,
        ks_stat: summary.ks_stat,
    };
    let json_path = opts.out_dir.join("normality.json");
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&json_path, text)
        .with_context(|| format!("writing {}", json_path.display()))?;

    println!(
        "normality: algorithm = {}, n = {n}, {} replications, mean = {:.4}, \
         std = {:.4}, ks = {:.4}",
        opts.algorithm, summary.count, summary.mean, summary.std, summary.ks_stat
    );
    Ok(summary)
}

/// Reads the rows of one algorithm at the chosen snapshot (default: the
/// largest snapshot the file contains for that algorithm).
fn read_terminal_rows(
    path: &Path,
    algorithm: &str,
    requested_n: Option<u64>,
) -> Result<(u64, Vec<TerminalRow>)> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers().context("reading the CSV header")?.clone();
    if headers.iter().ne(CSV_HEADER) {
        bail!(UsageError::new(format!(
            "{} does not have the runner's column layout",
            path.display()
        )));
    }

    // (n, w_hat, sigma2_hat) triples of the chosen algorithm.
    let mut matching: Vec<(u64, String, String)> = Vec::new();
    for record in reader.records() {
        let record = record.context("reading a CSV row")?;
        if &record[1] != algorithm {
            continue;
        }
        let n: u64 = record[2]
            .parse()
            .with_context(|| format!("bad step count {:?}", &record[2]))?;
        matching.push((n, record[4].to_string(), record[5].to_string()));
    }
    if matching.is_empty() {
        bail!(UsageError::new(format!(
            "{} has no rows for algorithm {algorithm:?}",
            path.display()
        )));
    }

    let n = match requested_n {
        Some(n) => n,
        None => matching.iter().map(|r| r.0).max().expect("non-empty"),
    };
    if n == 0 {
        bail!(UsageError::new(
            "n = 0 rows carry no cost estimate; pick a positive snapshot"
        ));
    }

    let mut rows = Vec::new();
    for (row_n, w_hat, sigma2) in matching {
        if row_n != n {
            continue;
        }
        if w_hat.is_empty() || sigma2.is_empty() {
            bail!("a row at n = {n} is missing its estimates");
        }
        rows.push(TerminalRow {
            w_hat: w_hat.parse().with_context(|| format!("bad cost estimate {w_hat:?}"))?,
            sigma2_hat: sigma2
                .parse()
                .with_context(|| format!("bad variance estimate {sigma2:?}"))?,
        });
    }
    if rows.is_empty() {
        bail!(UsageError::new(format!(
            "no rows for algorithm {algorithm:?} at n = {n}"
        )));
    }
    Ok((n, rows))
}

fn write_histogram(path: &Path, summary: &NormalitySummary) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(["bin_lo", "bin_hi", "count", "density"])?;
    let total = summary.count as f64;
    for bin in &summary.bins {
        let width = bin.hi - bin.lo;
        let density = if width > 0.0 { bin.count as f64 / (total * width) } else { 0.0 };
        writer.write_record([
            bin.lo.to_string(),
            bin.hi.to_string(),
            bin.count.to_string(),
            density.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{eps_dir, execute_run, RunOptions};

    /// A tiny instance with enough replications to clear the minimum
    /// batch size of the summary statistics.
    fn small_config() -> ExperimentConfig {
        serde_json::from_value(serde_json::json!({
            "schema_version": 1,
            "seed": 3,
            "source": {"kind": "random_empirical", "count": 15, "dim": 1, "lo": 0.0, "hi": 1.0},
            "target": {"kind": "random", "count": 3, "dim": 1, "lo": 0.0, "hi": 1.0},
            "epsilons": [0.4],
            "algorithms": [{"name": "sgd"}],
            "n_max": 200,
            "replications": 32,
            "snapshots": [100, 200],
        }))
        .unwrap()
    }

    #[test]
    fn studentized_terminal_values_round_trip_from_a_real_run() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config();
        let out = dir.path().join("out");
        execute_run(
            &config,
            &RunOptions { out_dir: &out, truth_path: None, threads: Some(2) },
        )
        .unwrap();

        let results = eps_dir(&out, 0.4).join("results.csv");
        let norm_dir = dir.path().join("norm");
        let summary = execute_normality(
            &config,
            &NormalityOptions {
                results: &results,
                eps: 0.4,
                algorithm: "sgd",
                n: None,
                bins: 8,
                out_dir: &norm_dir,
                truth_path: None,
            },
        )
        .unwrap();

        assert_eq!(summary.count, 32);
        // 200 steps of SGD on a 3-atom target: the studentized statistic
        // should at least be of unit order, not degenerate.
        assert!(summary.mean.abs() < 5.0);
        assert!(summary.std > 0.05 && summary.std < 20.0);

        let report: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(norm_dir.join("normality.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report["n"], 200);
        assert_eq!(report["count"], 32);

        let mut reader = csv::Reader::from_path(norm_dir.join("histogram.csv")).unwrap();
        let total: u64 = reader
            .records()
            .map(|r| r.unwrap()[2].parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 32);
    }

    #[test]
    fn missing_algorithms_and_zero_snapshots_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config();
        let out = dir.path().join("out");
        execute_run(
            &config,
            &RunOptions { out_dir: &out, truth_path: None, threads: Some(1) },
        )
        .unwrap();
        let results = eps_dir(&out, 0.4).join("results.csv");

        let err = execute_normality(
            &config,
            &NormalityOptions {
                results: &results,
                eps: 0.4,
                algorithm: "sn",
                n: None,
                bins: 8,
                out_dir: dir.path(),
                truth_path: None,
            },
        )
        .unwrap_err();
        assert!(crate::is_usage_error(&err));

        let err = execute_normality(
            &config,
            &NormalityOptions {
                results: &results,
                eps: 0.4,
                algorithm: "sgd",
                n: Some(0),
                bins: 8,
                out_dir: dir.path(),
                truth_path: None,
            },
        )
        .unwrap_err();
        assert!(crate::is_usage_error(&err));
    }
}
