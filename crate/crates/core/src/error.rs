use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quantile level {0} outside [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge (error estimate {estimate:.3e})")]
    Quadrature { estimate: f64 },

    #[error("quantile specification is not strictly increasing near alpha={alpha} at x={x:?}")]
    NotMonotone { alpha: f64, x: Vec<f64> },

    #[error("not enough auctions with {bidders} bidders: have {have}, need {need}")]
    InsufficientData { bidders: u32, have: usize, need: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver did not converge at alpha={alpha} (gap {gap:.3e} after {iterations} iterations)")]
    SolverFailed { alpha: f64, gap: f64, iterations: usize },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("schema error at row {row}: {msg}")]
    Schema { row: usize, msg: String },

    #[error("unknown name: {0}")]
    UnknownName(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::Singular(_)
                | Error::SolverFailed { .. }
                | Error::Degenerate(_)
        )
    }
}
