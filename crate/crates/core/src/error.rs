use thiserror::Error;

/// Errors raised by training, extraction and I/O.
#[derive(Debug, Error)]
pub enum PradaError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("constant column: {0}")]
    ConstantColumn(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("frozen parameter {index} is nonzero ({value})")]
    FrozenParameterNonzero { index: usize, value: f64 },

    #[error("variable {0} is not in the component support")]
    UnknownVariable(usize),

    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    #[error("invalid data at row {row}, column {column}: {message}")]
    InvalidCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPositiveSemiDefinite(f64),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl PradaError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PradaError::InvalidConfig(_) | PradaError::UnknownVariable(_) => ErrorKind::Usage,
            PradaError::NonFinite(_)
            | PradaError::FrozenParameterNonzero { .. }
            | PradaError::NotPositiveSemiDefinite(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, PradaError>;
