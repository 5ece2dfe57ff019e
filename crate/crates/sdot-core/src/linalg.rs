//! Dense symmetric linear algebra on the zero-mean subspace.
//!
//! Potentials live in the hyperplane orthogonal to the all-ones vector, so a
//! handful of operations recur everywhere: centering a vector, building the
//! centering projector, spectral functions of symmetric matrices through
//! their eigendecomposition, and extremal eigenvalues restricted to the
//! zero-mean subspace. The restriction is computed by shifting the all-ones
//! direction above the rest of the spectrum rather than by building an
//! explicit basis of the hyperplane, which keeps everything in `R^{JxJ}`.

use libm::sqrt;
use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue threshold below which a mode counts as null when
/// inverting or taking square roots of symmetric matrices.
pub const EIG_REL_TOL: f64 = 1e-10;

/// Subtracts the mean from every entry, in place. The empty vector is left
/// untouched.
pub fn project_zero_mean_in_place(v: &mut DVector<f64>) {
    let n = v.len();
    if n == 0 {
        return;
    }
    let mean = v.sum() / n as f64;
    for i in 0..n {
        v[i] -= mean;
    }
}

/// Returns a centered copy of `v`.
pub fn project_zero_mean(v: &DVector<f64>) -> DVector<f64> {
    let mut out = v.clone();
    project_zero_mean_in_place(&mut out);
    out
}

/// The unit vector pointing along all-ones in `R^j`.
pub fn ones_normalized(j: usize) -> DVector<f64> {
    DVector::from_element(j, 1.0 / sqrt(j as f64))
}

/// The orthogonal projector onto the zero-mean subspace,
/// `I - (1/j) * ones * ones^T`.
pub fn centering_projector(j: usize) -> DMatrix<f64> {
    let mut p = DMatrix::from_element(j, j, -1.0 / j as f64);
    for i in 0..j {
        p[(i, i)] += 1.0;
    }
    p
}

/// Averages a nearly-symmetric matrix with its transpose, in place.
///
/// Rank-one update recursions preserve symmetry exactly in real arithmetic
/// but drift at roundoff level in floating point; periodic symmetrization
/// stops the drift from compounding.
pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for r in 0..n {
        for c in (r + 1)..n {
            let avg = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = avg;
            m[(c, r)] = avg;
        }
    }
}

/// Eigendecomposition of a symmetric matrix, retained so that several
/// spectral functions (pseudoinverse, inverse square root, rank) can be
/// built from one factorization.
#[derive(Debug, Clone)]
pub struct SymmetricDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SymmetricDecomposition {
    /// Decomposes `m`, which the caller promises is symmetric.
    pub fn new(m: &DMatrix<f64>) -> Self {
        let eig = m.clone().symmetric_eigen();
        Self { eigenvalues: eig.eigenvalues, eigenvectors: eig.eigenvectors }
    }

    /// Largest eigenvalue magnitude; zero for the zero matrix.
    pub fn max_abs_eigenvalue(&self) -> f64 {
        let mut m = 0.0;
        for i in 0..self.eigenvalues.len() {
            let a = libm::fabs(self.eigenvalues[i]);
            if a > m {
                m = a;
            }
        }
        m
    }

    fn keep_threshold(&self) -> f64 {
        EIG_REL_TOL * self.max_abs_eigenvalue()
    }

    /// Number of eigenvalues above the relative null threshold.
    pub fn rank(&self) -> usize {
        let thr = self.keep_threshold();
        (0..self.eigenvalues.len())
            .filter(|&i| libm::fabs(self.eigenvalues[i]) > thr)
            .count()
    }

    /// Rebuilds `V f(lambda) V^T`, applying `f` only to eigenvalues above
    /// the null threshold and zeroing the rest.
    fn recompose(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        let thr = self.keep_threshold();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            let lambda = self.eigenvalues[i];
            if libm::fabs(lambda) <= thr {
                continue;
            }
            let col = self.eigenvectors.column(i);
            out.ger(f(lambda), &col, &col, 1.0);
        }
        symmetrize_in_place(&mut out);
        out
    }

    /// Moore-Penrose pseudoinverse.
    pub fn pinv(&self) -> DMatrix<f64> {
        self.recompose(|l| 1.0 / l)
    }

    /// Pseudoinverse square root; meaningful for positive semidefinite
    /// input (negative modes above threshold would produce NaN, which the
    /// caller is expected to treat as a hard failure).
    pub fn pinv_sqrt(&self) -> DMatrix<f64> {
        self.recompose(|l| 1.0 / sqrt(l))
    }

    /// Principal square root of a positive semidefinite matrix.
    pub fn sqrt_psd(&self) -> DMatrix<f64> {
        self.recompose(sqrt)
    }
}

/// Pseudoinverse of a symmetric matrix via its eigendecomposition.
pub fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    SymmetricDecomposition::new(m).pinv()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    SymmetricDecomposition::new(m).eigenvalues.min()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricDecomposition::new(m).eigenvalues.max()
}

/// Spectral norm of a symmetric matrix (largest eigenvalue magnitude).
pub fn spectral_norm_symmetric(m: &DMatrix<f64>) -> f64 {
    SymmetricDecomposition::new(m).max_abs_eigenvalue()
}

/// Smallest eigenvalue of a symmetric matrix restricted to the zero-mean
/// subspace.
///
/// Adds `(s/j) * ones * ones^T` with `s` larger than the spectral radius, so
/// the all-ones eigenvalue moves above every restricted eigenvalue and the
/// global minimum of the shifted matrix equals the restricted minimum of the
/// original. For `j <= 1` the subspace is trivial and the result is `+inf`
/// (every bound over it holds vacuously).
pub fn lambda_min_perp(m: &DMatrix<f64>) -> f64 {
    let j = m.nrows();
    debug_assert_eq!(j, m.ncols());
    if j <= 1 {
        return f64::INFINITY;
    }
    let shift = m.norm() + 1.0;
    let per_entry = shift / j as f64;
    let mut shifted = m.clone();
    for r in 0..j {
        for c in 0..j {
            shifted[(r, c)] += per_entry;
        }
    }
    shifted.symmetric_eigen().eigenvalues.min()
}
