use thiserror::Error;

/// Errors surfaced by validation and numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (residual {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("matrix is not a projector (residual {0:.3e})")]
    NotProjector(f64),

    #[error("not a density matrix: {0}")]
    NotDensity(String),

    #[error("Kraus set is not trace preserving (residual {0:.3e})")]
    TracePreservationViolated(f64),

    #[error("analytic derivative disagrees with finite difference (residual {0:.3e})")]
    DerivativeInconsistency(f64),

    #[error("state derivative leaves the support (residual {0:.3e}); SLD does not exist")]
    SupportConditionViolated(f64),

    #[error("POVM does not resolve the identity (residual {0:.3e})")]
    PovmIncomplete(f64),

    #[error("outcome distribution is degenerate: {0}")]
    DegenerateDistribution(String),

    #[error("parameter {value} outside domain [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("dimension {0} exceeds supported maximum {1}")]
    DimensionOverflow(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
