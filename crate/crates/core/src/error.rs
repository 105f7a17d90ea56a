use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid quaternion: norm {0} deviates from 1")]
    InvalidQuaternion(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("Quu not positive definite at knot {knot} with mu = {mu:e}")]
    NotPositiveDefinite { knot: usize, mu: f64 },

    #[error("box QP did not satisfy KKT conditions within {0} iterations")]
    BoxQpIterations(usize),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Configuration error naming the offending field path.
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
