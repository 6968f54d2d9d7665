use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("lag {lag} is not an integer multiple of the grid step {dt}; align the grid (interpolation is not supported)")]
    LagNotAligned { lag: f64, dt: f64 },

    #[error("covariance is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("circulant embedding has negative eigenvalue {value:e} at index {index}; use the cholesky method instead")]
    CirculantNegative { index: usize, value: f64 },

    #[error("picard iteration did not converge on window {window} after {iterations} iterations (last residual {residual:e})")]
    MaxIterations {
        window: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("iteration diverged on window {window}: non-finite value at node {node}")]
    Divergence { window: usize, node: usize },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// `true` for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::CirculantNegative { .. }
                | Error::MaxIterations { .. }
                | Error::Divergence { .. }
                | Error::Quadrature(_)
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
