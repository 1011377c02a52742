use thiserror::Error;

/// Errors produced by the tomography core.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not match the operation's requirements.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-side contract was violated (e.g. a non-Hermitian input where
    /// Hermiticity is required).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A matrix expected to be positive semidefinite has a significantly
    /// negative eigenvalue.
    #[error("not positive semidefinite: min eigenvalue {min_eig:e}")]
    NotPsd { min_eig: f64 },

    /// The measurement set does not determine the state.
    #[error("underdetermined measurement set: design-matrix rank {rank} < {needed}")]
    Underdetermined { rank: usize, needed: usize },

    /// A count record is missing a key required by the measurement classes.
    #[error("incomplete count data: missing key {0}")]
    IncompleteData(String),

    /// Calibration histograms cannot be turned into transmittance estimates.
    #[error("calibration data error: {0}")]
    Calibration(String),

    /// A record failed semantic validation; `path` locates the offending field.
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: msg.into(),
        }
    }
}
