use thiserror::Error;

/// Errors surfaced by dataset validation, shape checks and the numerical
/// routines. Validation and shape problems are caller mistakes; `Numerical`
/// means the optimizer ran into non-finite arithmetic and carries the
/// offending iterate for post-mortem inspection.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        /// Flattened parameter vector at the point of failure, when available.
        iterate: Option<Vec<f64>>,
    },

    #[error("study error: {0}")]
    Study(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
