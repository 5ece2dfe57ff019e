//! Experiment configuration: a versioned JSON schema describing the
//! instance (source and target measures), the transport regularization
//! grid, the solvers to run, and the Monte-Carlo protocol.
//!
//! Random instances are materialized from reserved sample streams so that
//! experiment replications (streams `0..replications`) never overlap with
//! instance generation no matter how many replications run.

use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use sdot_core::measures::{random_weights, uniform_points, GaussianMixture, SeededStream, SourceMeasure};
use sdot_core::objective::{CostKind, DiscreteMeasure};
use sdot_core::solver::{AdamParams, AlgorithmConfig, SgdParams, SgnParams, SnParams};

use crate::UsageError;

/// The one schema this binary reads.
pub const SCHEMA_VERSION: u32 = 1;

/// Stream id used to draw a random source support.
pub const SOURCE_STREAM: u64 = u64::MAX;
/// Stream id used to draw a random target support.
pub const TARGET_STREAM: u64 = u64::MAX - 1;
/// Stream id used to draw diagnostic evaluation points.
pub const CHECK_STREAM: u64 = u64::MAX - 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Base seed; replication `r` runs on stream `r` of this seed.
    pub seed: u64,
    pub source: SourceSpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub cost: CostSpec,
    /// Regularization strengths; each gets its own output subdirectory.
    pub epsilons: Vec<f64>,
    pub algorithms: Vec<AlgorithmSpec>,
    /// Steps per replication.
    pub n_max: u64,
    #[serde(default = "one")]
    pub replications: u32,
    /// Snapshot schedule, strictly increasing within `[1, n_max]`.
    pub snapshots: Vec<u64>,
    /// Whether Gauss-Newton runs also report the averaged preconditioner
    /// deviation from the limit matrix.
    #[serde(default)]
    pub record_sbar: bool,
    /// Default output directory; the command line overrides it.
    #[serde(default)]
    pub out: Option<String>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CostSpec {
    #[default]
    SqEuclidean,
    HalfSqEuclidean,
}

impl CostSpec {
    pub fn kind(self) -> CostKind {
        match self {
            CostSpec::SqEuclidean => CostKind::SqEuclidean,
            CostSpec::HalfSqEuclidean => CostKind::HalfSqEuclidean,
        }
    }
}

/// How to weight generated support points.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    /// All atoms carry mass `1/count`.
    Uniform,
    /// Raw weights drawn uniformly from `[lo, hi]`, then normalized.
    Random { lo: f64, hi: f64 },
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Uniform
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    /// Explicit finitely supported source.
    Empirical {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Finitely supported source drawn once from the reserved stream:
    /// `count` points uniform in `[lo, hi]^dim`.
    RandomEmpirical {
        count: usize,
        dim: usize,
        lo: f64,
        hi: f64,
        #[serde(default)]
        weights: WeightSpec,
    },
    /// Continuous source: isotropic Gaussian mixture.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        stds: Vec<f64>,
    },
    /// Continuous source: uniform on `[0,1]^dim`.
    UniformHypercube { dim: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Explicit {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Support drawn once from the reserved stream.
    Random {
        count: usize,
        dim: usize,
        lo: f64,
        hi: f64,
        #[serde(default)]
        weights: WeightSpec,
    },
}

/// Solver selection with optional tuning overrides; anything omitted takes
/// the documented default for that algorithm.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Sgd {
        #[serde(default)]
        alpha: Option<f64>,
        /// Defaults to `eps / (2 min(nu))` for the instance at hand.
        #[serde(default)]
        scale: Option<f64>,
    },
    Adam {
        #[serde(default)]
        stepsize: Option<f64>,
        #[serde(default)]
        beta1: Option<f64>,
        #[serde(default)]
        beta2: Option<f64>,
        #[serde(default)]
        eps: Option<f64>,
    },
    Sgn {
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        beta: Option<f64>,
    },
    Sn {
        #[serde(default)]
        alpha: Option<f64>,
    },
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Sgd { .. } => "sgd",
            AlgorithmSpec::Adam { .. } => "adam",
            AlgorithmSpec::Sgn { .. } => "sgn",
            AlgorithmSpec::Sn { .. } => "sn",
        }
    }

    /// Fills defaults against the instance and validates the result.
    pub fn resolve(&self, eps: f64, min_weight: f64) -> Result<AlgorithmConfig> {
        let config = match *self {
            AlgorithmSpec::Sgd { alpha, scale } => {
                let defaults = SgdParams::for_instance(eps, min_weight);
                AlgorithmConfig::Sgd(SgdParams {
                    alpha: alpha.unwrap_or(defaults.alpha),
                    scale: scale.unwrap_or(defaults.scale),
                })
            }
            AlgorithmSpec::Adam { stepsize, beta1, beta2, eps: adam_eps } => {
                let d = AdamParams::default();
                AlgorithmConfig::Adam(AdamParams {
                    stepsize: stepsize.unwrap_or(d.stepsize),
                    beta1: beta1.unwrap_or(d.beta1),
                    beta2: beta2.unwrap_or(d.beta2),
                    eps: adam_eps.unwrap_or(d.eps),
                })
            }
            AlgorithmSpec::Sgn { alpha, gamma, beta } => {
                let d = SgnParams::default();
                AlgorithmConfig::Sgn(SgnParams {
                    alpha: alpha.unwrap_or(d.alpha),
                    gamma: gamma.unwrap_or(d.gamma),
                    beta: beta.unwrap_or(d.beta),
                })
            }
            AlgorithmSpec::Sn { alpha } => {
                let d = SnParams::default();
                AlgorithmConfig::Sn(SnParams { alpha: alpha.unwrap_or(d.alpha) })
            }
        };
        config
            .validate()
            .map_err(|e| UsageError::new(format!("algorithm {}: {e}", self.name())))?;
        Ok(config)
    }
}

/// A fully materialized instance: what the runner actually consumes.
pub struct Instance {
    pub source: SourceMeasure,
    pub target: DiscreteMeasure,
    pub kind: CostKind,
}

fn matrix_of_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        bail!(UsageError::new(format!("{what}: empty point list")));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        bail!(UsageError::new(format!("{what}: ragged or zero-dimensional points")));
    }
    let mut m = DMatrix::zeros(rows.len(), dim);
    for (i, row) in rows.iter().enumerate() {
        for (d, &x) in row.iter().enumerate() {
            m[(i, d)] = x;
        }
    }
    Ok(m)
}

fn discrete_of(
    points: &[Vec<f64>],
    weights: Option<&Vec<f64>>,
    what: &str,
) -> Result<DiscreteMeasure> {
    let pts = matrix_of_rows(points, what)?;
    let m = match weights {
        Some(w) => DiscreteMeasure::new(pts, DVector::from_vec(w.clone())),
        None => DiscreteMeasure::uniform(pts),
    };
    m.map_err(|e| UsageError::new(format!("{what}: {e}")).into())
}

fn generated_measure(
    seed: u64,
    stream: u64,
    count: usize,
    dim: usize,
    lo: f64,
    hi: f64,
    weights: WeightSpec,
    what: &str,
) -> Result<DiscreteMeasure> {
    if count == 0 || dim == 0 || !(lo < hi) {
        bail!(UsageError::new(format!("{what}: need count > 0, dim > 0, lo < hi")));
    }
    let mut rng = SeededStream::new(seed, stream).rng();
    let pts = uniform_points(&mut rng, count, dim, lo, hi);
    let m = match weights {
        WeightSpec::Uniform => DiscreteMeasure::uniform(pts),
        WeightSpec::Random { lo: wlo, hi: whi } => {
            let w = random_weights(&mut rng, count, wlo, whi)
                .map_err(|e| UsageError::new(format!("{what}: {e}")))?;
            DiscreteMeasure::new(pts, w)
        }
    };
    m.map_err(|e| UsageError::new(format!("{what}: {e}")).into())
}

impl ExperimentConfig {
    /// Structural validation beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(UsageError::new(format!(
                "schema_version {} unsupported (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.epsilons.is_empty() {
            bail!(UsageError::new("epsilons: need at least one value"));
        }
        if self.epsilons.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            bail!(UsageError::new("epsilons: every value must be positive and finite"));
        }
        if self.algorithms.is_empty() {
            bail!(UsageError::new("algorithms: need at least one entry"));
        }
        if self.replications == 0 {
            bail!(UsageError::new("replications: must be at least 1"));
        }
        let mut last = 0u64;
        for &s in &self.snapshots {
            if s <= last || s > self.n_max {
                bail!(UsageError::new(
                    "snapshots: must be strictly increasing within [1, n_max]"
                ));
            }
            last = s;
        }
        Ok(())
    }

    /// Builds the actual measures, drawing any generated supports from the
    /// reserved streams of the base seed.
    pub fn materialize(&self) -> Result<Instance> {
        let source = match &self.source {
            SourceSpec::Empirical { points, weights } => {
                SourceMeasure::Empirical(discrete_of(points, weights.as_ref(), "source")?)
            }
            SourceSpec::RandomEmpirical { count, dim, lo, hi, weights } => {
                SourceMeasure::Empirical(generated_measure(
                    self.seed,
                    SOURCE_STREAM,
                    *count,
                    *dim,
                    *lo,
                    *hi,
                    *weights,
                    "source",
                )?)
            }
            SourceSpec::GaussianMixture { weights, means, stds } => {
                let m = matrix_of_rows(means, "source mixture means")?;
                let mix = GaussianMixture::new(
                    DVector::from_vec(weights.clone()),
                    m,
                    stds.clone(),
                )
                .map_err(|e| UsageError::new(format!("source mixture: {e}")))?;
                SourceMeasure::GaussianMixture(mix)
            }
            SourceSpec::UniformHypercube { dim } => {
                if *dim == 0 {
                    bail!(UsageError::new("source: hypercube dimension must be positive"));
                }
                SourceMeasure::UniformHypercube { dim: *dim }
            }
        };
        let target = match &self.target {
            TargetSpec::Explicit { points, weights } => {
                discrete_of(points, weights.as_ref(), "target")?
            }
            TargetSpec::Random { count, dim, lo, hi, weights } => generated_measure(
                self.seed,
                TARGET_STREAM,
                *count,
                *dim,
                *lo,
                *hi,
                *weights,
                "target",
            )?,
        };
        if source.dim() != target.dim() {
            bail!(UsageError::new(format!(
                "source dimension {} does not match target dimension {}",
                source.dim(),
                target.dim()
            )));
        }
        Ok(Instance { source, target, kind: self.cost.kind() })
    }
}

/// Reads a config file. A manifest produced by `run` (recognized by its
/// `config` + `config_sha256` members) is accepted and unwrapped, so a
/// recorded experiment can be replayed directly from its manifest.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let raw = fs::read_to_string(path)
        .map_err(|e| UsageError::new(format!("reading config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&raw)
        .map_err(|e| UsageError::new(format!("{}: {e}", path.display())))?;
    let config_value = match value.as_object() {
        Some(obj) if obj.contains_key("config") && obj.contains_key("config_sha256") => {
            obj["config"].clone()
        }
        _ => value,
    };
    let config: ExperimentConfig = serde_json::from_value(config_value)
        .map_err(|e| UsageError::new(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "seed": 7,
            "source": {"kind": "random_empirical", "count": 5, "dim": 2, "lo": 0.0, "hi": 1.0},
            "target": {"kind": "random", "count": 3, "dim": 2, "lo": 0.0, "hi": 1.0},
            "epsilons": [0.5],
            "algorithms": [{"name": "sgn"}],
            "n_max": 10,
            "snapshots": [10],
        })
    }

    #[test]
    fn minimal_config_parses_and_materializes() {
        let config: ExperimentConfig = serde_json::from_value(minimal_json()).unwrap();
        config.validate().unwrap();
        let inst = config.materialize().unwrap();
        assert_eq!(inst.source.dim(), 2);
        assert_eq!(inst.target.len(), 3);
        // Generated supports are a function of the seed alone.
        let again = config.materialize().unwrap();
        assert_eq!(
            inst.target.points().as_slice(),
            again.target.points().as_slice()
        );
    }

    #[test]
    fn unknown_fields_and_bad_schedules_are_rejected() {
        let mut with_typo = minimal_json();
        with_typo["replciations"] = serde_json::json!(3);
        assert!(serde_json::from_value::<ExperimentConfig>(with_typo).is_err());

        let mut bad_snapshots = minimal_json();
        bad_snapshots["snapshots"] = serde_json::json!([5, 5]);
        let config: ExperimentConfig = serde_json::from_value(bad_snapshots).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn sgd_defaults_are_instance_dependent() {
        let spec = AlgorithmSpec::Sgd { alpha: None, scale: None };
        match spec.resolve(0.4, 0.25).unwrap() {
            AlgorithmConfig::Sgd(p) => {
                assert_eq!(p.alpha, 0.5);
                assert!((p.scale - 0.8).abs() < 1e-15);
            }
            _ => panic!("wrong algorithm"),
        }
    }

    #[test]
    fn mismatched_dimensions_fail_materialization() {
        let mut json = minimal_json();
        json["target"] = serde_json::json!({"kind": "random", "count": 3, "dim": 3, "lo": 0.0, "hi": 1.0});
        let config: ExperimentConfig = serde_json::from_value(json).unwrap();
        assert!(config.materialize().is_err());
    }
}
