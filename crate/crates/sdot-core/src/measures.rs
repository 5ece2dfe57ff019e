//! Source-measure models and reproducible sampling.
//!
//! Every random draw in the crate flows through a [`SeededStream`]: a
//! `(seed, stream)` pair mapped onto a ChaCha8 generator via
//! `seed_from_u64(seed)` followed by `set_stream(stream)`. The pair is the
//! reproducibility contract. The same pair yields the same draw sequence on
//! every platform, and distinct stream ids give independent sequences from
//! one experiment seed, which is how paired replications are produced:
//! replication `r` of every algorithm reads stream `r`, so all algorithms
//! see identical sample paths.
//!
//! Draw order per sample is part of the contract and is documented on each
//! variant; changing it would silently break recorded results, so it never
//! changes.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numeric::NeumaierSum;
use crate::objective::{DiscreteMeasure, SIMPLEX_TOL};
use crate::Error;

/// Identifies one reproducible random sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededStream {
    pub seed: u64,
    pub stream: u64,
}

impl SeededStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Instantiates the generator for this stream.
    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// An isotropic Gaussian mixture: `K` components with shared-per-component
/// scalar standard deviation.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: DVector<f64>,
    cdf: Vec<f64>,
    /// One row per component mean.
    means: DMatrix<f64>,
    stds: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: DVector<f64>, means: DMatrix<f64>, stds: Vec<f64>) -> Result<Self, Error> {
        let k = means.nrows();
        if k == 0 {
            return Err(Error::EmptyInput("mixture components"));
        }
        if means.ncols() == 0 {
            return Err(Error::EmptyInput("ambient dimension"));
        }
        if weights.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: weights.len() });
        }
        if stds.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: stds.len() });
        }
        for i in 0..k {
            for d in 0..means.ncols() {
                if !means[(i, d)].is_finite() {
                    return Err(Error::InvalidMeasure("non-finite component mean"));
                }
            }
            if !stds[i].is_finite() || stds[i] <= 0.0 {
                return Err(Error::InvalidMeasure("component std must be finite and positive"));
            }
        }
        let mut total = NeumaierSum::new();
        let mut cdf = Vec::with_capacity(k);
        for i in 0..k {
            let w = weights[i];
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidMeasure("component weights must be finite and positive"));
            }
            total.add(w);
            cdf.push(total.value());
        }
        if libm::fabs(total.value() - 1.0) > SIMPLEX_TOL {
            return Err(Error::InvalidMeasure("component weights must sum to one"));
        }
        Ok(Self { weights, cdf, means, stds })
    }

    pub fn components(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    fn component_below(&self, u: f64) -> usize {
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.components() - 1)
    }
}

/// A source distribution a solver can stream samples from.
#[derive(Debug, Clone)]
pub enum SourceMeasure {
    /// Finitely supported source. Draw order: one uniform in `[0, 1)` for
    /// the inverse-CDF atom lookup.
    Empirical(DiscreteMeasure),
    /// Gaussian mixture. Draw order: one uniform in `[0, 1)` selecting the
    /// component, then `dim` standard normals, coordinate by coordinate.
    GaussianMixture(GaussianMixture),
    /// Uniform on the unit hypercube `[0, 1)^dim`. Draw order: `dim`
    /// uniforms, coordinate by coordinate.
    UniformHypercube { dim: usize },
}

impl SourceMeasure {
    pub fn dim(&self) -> usize {
        match self {
            SourceMeasure::Empirical(m) => m.dim(),
            SourceMeasure::GaussianMixture(m) => m.dim(),
            SourceMeasure::UniformHypercube { dim } => *dim,
        }
    }

    /// The underlying discrete measure, when the source has one. Exact
    /// objective evaluations and ground-truth solves need this.
    pub fn as_discrete(&self) -> Option<&DiscreteMeasure> {
        match self {
            SourceMeasure::Empirical(m) => Some(m),
            _ => None,
        }
    }

    /// Draws one sample into `out`, which must have length `dim`.
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut DVector<f64>) {
        assert_eq!(out.len(), self.dim(), "sample buffer length");
        match self {
            SourceMeasure::Empirical(m) => {
                let u: f64 = rng.random();
                let idx = m.index_below(u);
                let pts = m.points();
                for d in 0..m.dim() {
                    out[d] = pts[(idx, d)];
                }
            }
            SourceMeasure::GaussianMixture(m) => {
                let u: f64 = rng.random();
                let k = m.component_below(u);
                let std = m.stds[k];
                for d in 0..m.dim() {
                    let z: f64 = StandardNormal.sample(rng);
                    out[d] = m.means[(k, d)] + std * z;
                }
            }
            SourceMeasure::UniformHypercube { dim } => {
                for d in 0..*dim {
                    out[d] = rng.random();
                }
            }
        }
    }

    /// Draws one sample as an owned vector.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.sample_into(rng, &mut out);
        out
    }
}

/// Builds the uniform empirical measure of a batch of samples. Duplicate
/// points keep their multiplicity through repeated rows.
pub fn empirical_of_samples(samples: &[DVector<f64>]) -> Result<DiscreteMeasure, Error> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptyInput("sample batch"));
    }
    let dim = samples[0].len();
    for s in samples {
        if s.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: s.len() });
        }
    }
    let points = DMatrix::from_fn(n, dim, |i, d| samples[i][d]);
    DiscreteMeasure::uniform(points)
}

/// Draws `count` points uniformly from the box `[lo, hi)^dim`, one row per
/// point, coordinates in row-major draw order.
pub fn uniform_points(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
    lo: f64,
    hi: f64,
) -> DMatrix<f64> {
    assert!(lo < hi, "box bounds must be ordered");
    let mut pts = DMatrix::zeros(count, dim);
    for i in 0..count {
        for d in 0..dim {
            let u: f64 = rng.random();
            pts[(i, d)] = lo + (hi - lo) * u;
        }
    }
    pts
}

/// Draws `count` weights uniformly from `[lo, hi)` and normalizes them to
/// the simplex; `lo > 0` keeps every weight strictly positive.
pub fn random_weights(
    rng: &mut ChaCha8Rng,
    count: usize,
    lo: f64,
    hi: f64,
) -> Result<DVector<f64>, Error> {
    if count == 0 {
        return Err(Error::EmptyInput("weight vector"));
    }
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParameter("weight range must satisfy 0 < lo < hi"));
    }
    let mut w = DVector::zeros(count);
    let mut total = NeumaierSum::new();
    for i in 0..count {
        let u: f64 = rng.random();
        let x = lo + (hi - lo) * u;
        w[i] = x;
        total.add(x);
    }
    let t = total.value();
    for i in 0..count {
        w[i] /= t;
    }
    Ok(w)
}
