use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("variable index {index} out of range for dimension {p}")]
    IndexOutOfRange { index: usize, p: usize },

    #[error("invalid multi-index: {0}")]
    InvalidMultiIndex(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("density is not integrable: {0}")]
    NotIntegrable(String),

    #[error("quadrature did not reach tolerance after {subdivisions} subdivisions (error estimate {error:e})")]
    QuadratureAccuracy { subdivisions: usize, error: f64 },

    #[error("objective overflow at sample {sample} (exponent {exponent:e})")]
    ObjectiveOverflow { sample: usize, exponent: f64 },

    #[error("every sample weight R_i(x_i) underflows (largest log weight {0:.1}); reduce ν or δ")]
    WeightUnderflow(f64),

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("n* search exceeded the ceiling of {ceiling} samples without a certified level")]
    SearchFailure { ceiling: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors a line search may treat as an infinite objective value.
    pub fn is_recoverable_in_line_search(&self) -> bool {
        matches!(
            self,
            Error::ObjectiveOverflow { .. }
                | Error::NotIntegrable(_)
                | Error::QuadratureAccuracy { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
