use thiserror::Error;

/// Errors produced by projection, fitting, evaluation and file handling.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point or pixel is outside the model's valid domain")]
    OutOfDomain,
    #[error("non-finite input")]
    NonFinite,
    #[error("iterative solve did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("singular jacobian in newton iteration")]
    SingularJacobian,
    #[error("linear system is rank deficient (rank {rank} < {cols})")]
    RankDeficient { rank: usize, cols: usize },
    #[error("only {accepted} valid samples, at least {required} needed")]
    TooFewValidSamples { accepted: usize, required: usize },
    #[error("no sample is valid for the current parameters")]
    AllSamplesInvalid,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid parameters: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed image header: {0}")]
    MalformedHeader(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
