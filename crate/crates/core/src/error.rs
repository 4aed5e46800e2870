use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data failed validation. `row` is 1-based when known.
    #[error("validation error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Validation { row: Option<usize>, message: String },

    /// A series or quadrature did not reach the requested tolerance.
    #[error("convergence failure: {context} (achieved relative tolerance {achieved:.3e})")]
    Convergence { context: String, achieved: f64 },

    /// A perturbative expansion was used outside its range of validity.
    #[error("regime error: {0}")]
    Regime(String),

    /// The force-vs-voltage parabola could not be inverted.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Too few inputs for the requested operation.
    #[error("arity error: need at least {needed}, got {got}")]
    Arity { needed: usize, got: usize },

    /// Normal equations of a linear fit are singular.
    #[error("rank-deficient fit: {0}")]
    Rank(String),

    /// A point could not be assigned to any bin.
    #[error("assignment error: {0}")]
    Assignment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Validation {
            row,
            message: msg.into(),
        }
    }
}
