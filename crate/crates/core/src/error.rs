use thiserror::Error;

/// Errors raised across the localization, bound and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("singular geometry: condition number {0:.3e} exceeds limit")]
    SingularGeometry(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular channel Gram matrix")]
    SingularChannel,
    #[error("zero Fisher information gives infinite variance")]
    InfiniteVariance,
    #[error("singular covariance matrix")]
    SingularCovariance,
    #[error("nuisance block {0} is not positive")]
    SingularNuisanceBlock(f64),
    #[error("singular Fisher information matrix")]
    SingularFim,
    #[error("multipath variance {multipath} below AWGN variance {awgn}")]
    InconsistentVariances { multipath: f64, awgn: f64 },
    #[error("reference index {index} invalid for {count} anchors")]
    InvalidReference { index: usize, count: usize },
    #[error("normal matrix ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
