//! Cached ground truth for discrete-discrete instances.
//!
//! The dense scaling solver is cheap at desk scale but not free, and the
//! same optimum is consumed by several subcommands (excess-risk columns,
//! diagnostics, normality centering). Solutions are therefore kept in a
//! JSON cache keyed by a hash of the exact instance bytes, so a cache
//! entry can never be served for a perturbed instance.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdot_core::diagnostics::{g_matrix, ground_truth_at, GroundTruth};
use sdot_core::objective::{CostKind, DiscreteMeasure};
use sdot_core::sinkhorn::{sinkhorn_solve, SinkhornResult};

/// One cached optimum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthEntry {
    pub eps: f64,
    /// Regularized transport cost.
    pub w_eps: f64,
    /// Optimal potential, zero-mean.
    pub v_star: Vec<f64>,
    /// Marginal residual the solve finished with.
    pub residual: f64,
}

/// Hashes the instance bytes: support points, weights, cost kind, and the
/// regularization strength. Matrices contribute their full storage in
/// column-major order, so any change to any coordinate changes the key.
pub fn instance_hash(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
    eps: f64,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"sdot-truth-v1\n");
    for dim in [source.len(), source.dim(), target.len(), target.dim()] {
        hasher.update((dim as u64).to_le_bytes());
    }
    for values in [
        source.points().as_slice(),
        source.weights().as_slice(),
        target.points().as_slice(),
        target.weights().as_slice(),
    ] {
        for &x in values {
            hasher.update(x.to_le_bytes());
        }
    }
    hasher.update([match kind {
        CostKind::SqEuclidean => 0u8,
        CostKind::HalfSqEuclidean => 1u8,
    }]);
    hasher.update(eps.to_le_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// The cache file: instance hash to entry, saved only when something
/// changed. A store without a backing path works purely in memory.
pub struct TruthStore {
    path: Option<PathBuf>,
    entries: BTreeMap<String, TruthEntry>,
    dirty: bool,
}

impl TruthStore {
    /// Opens the cache at `path`, starting empty if the file does not
    /// exist yet. `None` gives an in-memory store.
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let entries = match path {
            Some(p) if p.exists() => {
                let raw = fs::read_to_string(p)
                    .with_context(|| format!("reading truth cache {}", p.display()))?;
                serde_json::from_str(&raw)
                    .with_context(|| format!("parsing truth cache {}", p.display()))?
            }
            _ => BTreeMap::new(),
        };
        Ok(Self { path: path.map(Path::to_path_buf), entries, dirty: false })
    }

    pub fn entry(&self, hash: &str) -> Option<&TruthEntry> {
        self.entries.get(hash)
    }

    /// Returns the cached optimum when its recorded residual already meets
    /// `tol`; otherwise solves, stores, and returns. The flag reports
    /// whether a solve actually ran.
    pub fn get_or_solve(
        &mut self,
        source: &DiscreteMeasure,
        target: &DiscreteMeasure,
        kind: CostKind,
        eps: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<(TruthEntry, bool)> {
        let hash = instance_hash(source, target, kind, eps);
        if let Some(entry) = self.entries.get(&hash) {
            if entry.residual <= tol {
                return Ok((entry.clone(), false));
            }
        }
        let solved = solve_converged(source, target, kind, eps, tol, max_iter)?;
        let entry = TruthEntry {
            eps,
            w_eps: solved.w_eps,
            v_star: solved.v_star.iter().copied().collect(),
            residual: solved.residual,
        };
        self.entries.insert(hash, entry.clone());
        self.dirty = true;
        Ok((entry, true))
    }

    /// Writes the cache back if it changed and has a backing file.
    pub fn save(&mut self) -> Result<()> {
        if !self.dirty {
            return Ok(());
        }
        let Some(path) = &self.path else { return Ok(()) };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
        }
        let mut text = serde_json::to_string_pretty(&self.entries)?;
        text.push('\n');
        fs::write(path, text)
            .with_context(|| format!("writing truth cache {}", path.display()))?;
        self.dirty = false;
        Ok(())
    }
}

fn solve_converged(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornResult> {
    let solved = sinkhorn_solve(source, target, kind, eps, tol, max_iter)
        .context("ground-truth scaling solve")?;
    if !solved.converged {
        bail!(
            "scaling solve stalled at residual {:.3e} (tolerance {:.1e}, {} sweeps) for eps = {eps}",
            solved.residual,
            tol,
            solved.iterations
        );
    }
    Ok(solved)
}

/// Rebuilds the limit objects (optimum, curvature, and gradient
/// second-moment matrix) from a cache entry by evaluating the exact
/// objective at the stored potential.
pub fn limits_for(
    entry: &TruthEntry,
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
) -> Result<GroundTruth> {
    let synthetic = SinkhornResult {
        w_eps: entry.w_eps,
        v_star: DVector::from_vec(entry.v_star.clone()),
        u_star: DVector::zeros(source.len()),
        coupling: DMatrix::zeros(0, 0),
        iterations: 0,
        residual: entry.residual,
        converged: true,
    };
    ground_truth_at(source, target, kind, entry.eps, &synthetic)
        .context("evaluating limit matrices at the cached optimum")
}

/// The gradient second-moment matrix at the cached optimum.
pub fn g_star_for(
    entry: &TruthEntry,
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
) -> Result<DMatrix<f64>> {
    let v = DVector::from_vec(entry.v_star.clone());
    g_matrix(source, target, kind, &v, entry.eps)
        .context("evaluating the gradient second-moment matrix")
}
