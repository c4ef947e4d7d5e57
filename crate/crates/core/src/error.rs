//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector/matrix dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A precondition on an argument was violated (empty data, nonpositive
    /// scale, alpha outside (0,1), ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The data admits no meaningful answer (e.g. all points identical when
    /// the median heuristic needs a nonzero pairwise distance).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A numeric routine failed in a way that indicates a broken internal
    /// invariant (Cholesky of a matrix with eigenvalues >= 1, eigenvalue
    /// audit, quantile solver non-convergence).
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
