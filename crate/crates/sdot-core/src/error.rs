/// Failure modes shared across the crate.
///
/// Construction and update paths return these instead of panicking wherever
/// the failure depends on runtime data (user-supplied measures, streamed
/// gradients, ill-conditioned instances). Plain programmer errors, such as
/// mismatched buffer lengths on the hot per-sample path, stay as assertions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Two containers that must agree in length or shape do not.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A weight vector is not a valid probability vector, or support points
    /// are not finite.
    #[error("invalid measure: {0}")]
    InvalidMeasure(&'static str),

    /// A tuning parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A soft-assignment entry underflowed below the level where its
    /// reciprocal is representable, so a Newton update cannot proceed.
    #[error("soft assignment underflow at atom {index}")]
    AssignmentUnderflow { index: usize },

    /// A matrix that must be positive definite failed its factorization.
    #[error("singular system in {0}")]
    Singular(&'static str),

    /// An input collection is empty where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A statistic needs more observations than were provided.
    #[error("needs at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    /// A matrix has the wrong rank for the requested operation, for example
    /// a covariance that should have a one-dimensional kernel but does not.
    #[error("unexpected rank in {0}")]
    RankDeficient(&'static str),

    /// An iterative method hit its iteration cap before reaching tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
}
