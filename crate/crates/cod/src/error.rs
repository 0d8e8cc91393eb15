use thiserror::Error;

/// Errors surfaced by the pipeline. Each maps to a distinct CLI exit code,
/// see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("input format error: {0}")]
    InputFormat(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("empty predictable subset: {0}")]
    EmptyPredictableSubset(String),

    #[error("clustering did not converge within {0} outer iterations")]
    IterationCap(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InputFormat(_) | Error::Parse(_) | Error::Parameter(_) | Error::Domain(_) => 2,
            Error::FitFailure(_) => 3,
            Error::EmptyPredictableSubset(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
