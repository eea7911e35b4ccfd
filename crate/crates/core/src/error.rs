use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    /// The penalty is too small for the w-subproblem to be bounded below.
    #[error("penalty {rho} must exceed {min_valid} (4 * max negative eigenvalue of M)")]
    PenaltyTooSmall { rho: f64, min_valid: f64 },

    #[error("point is infeasible: violation {violation:e} exceeds tolerance {tol:e}")]
    Infeasible { violation: f64, tol: f64 },

    #[error("inner QP solver stopped with residual {residual:e} (target {tol:e}): {reason}")]
    InnerSolver {
        residual: f64,
        tol: f64,
        reason: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("trace too short: {0}")]
    TraceTooShort(String),

    #[error("objective increased from {before} to {after}; step size too large")]
    StepTooLarge { before: f64, after: f64 },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
