use thiserror::Error;

use crate::linalg::Matrix;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("metric kind mismatch: {0}")]
    KindMismatch(String),

    /// The affine combination behind a weighted Fréchet mean has a
    /// non-positive total weight.
    #[error("degenerate weights: total weight {0} is not positive")]
    DegenerateWeights(f64),

    #[error(
        "nearest-correlation projection did not converge after {iterations} iterations \
         (last change {last_change:e})"
    )]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        last_iterate: Box<Matrix>,
    },

    #[error("matrix decomposition failed: {0}")]
    Decomposition(String),

    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: Box<Error> },

    #[error("query is not in mean + rowspace of the centered design (relative residual {0:e})")]
    RowspaceViolation(f64),
}
