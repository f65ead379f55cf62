use thiserror::Error;

/// Errors raised anywhere in the construction and verification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("n = {n} exceeds the supported maximum of {max}: the axis polynomial would approach floating-point overflow")]
    TooLarge { n: usize, max: usize },

    #[error("epsilon calibration failed: no grid value satisfies the perturbation bound (kappa = {kappa})")]
    CalibrationFailure { kappa: f64 },

    #[error("construction violation: {0}")]
    ConstructionViolation(String),

    #[error("non-hyperbolic equilibrium at {coords:?} (epsilon = {epsilon}): eigenvalue {eigenvalue} is within tolerance of zero")]
    NonHyperbolic {
        coords: Vec<f64>,
        epsilon: f64,
        eigenvalue: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Unsupported(_) | Error::TooLarge { .. } => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
            Error::CalibrationFailure { .. }
            | Error::ConstructionViolation(_)
            | Error::NonHyperbolic { .. }
            | Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
