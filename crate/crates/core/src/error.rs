use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DroError> = std::result::Result<T, E>;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by the CLI exit code they map to (see [`DroError::exit_code`]).
#[derive(Debug, Error)]
pub enum DroError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} is not in {{-1, +1}}")]
    InvalidLabel { label: f64 },
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("csv parse error at row {row}, column '{column}': {message}")]
    CsvCell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("column '{0}' not found in csv header")]
    MissingColumn(String),
    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss at measure {measure}, atom {atom}")]
    NonFiniteLoss { measure: usize, atom: usize },
    #[error("non-finite gradient at measure {measure}")]
    NonFiniteGradient { measure: usize },
    #[error("phi overflow: t/beta = {ratio:.3e} exceeds 700 (t = {t:.3e}, beta = {beta:.3e})")]
    PhiOverflow { t: f64, beta: f64, ratio: f64 },
    #[error("sgd diverged at step {step}: criterion {value:.6e} vs initial {initial:.6e}")]
    Divergence { step: usize, value: f64, initial: f64 },
    #[error("all training atoms of measure {measure} were filtered (epsilon too large)")]
    AllTrainFiltered { measure: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DroError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        DroError::InvalidParameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DroError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical pipeline rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            DroError::NonFiniteLoss { .. }
                | DroError::NonFiniteGradient { .. }
                | DroError::PhiOverflow { .. }
                | DroError::Divergence { .. }
                | DroError::AllTrainFiltered { .. }
                | DroError::Numerical(_)
        )
    }

    /// Process exit code: 2 spec/parse, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            e if e.is_numerical() => 3,
            DroError::Io { .. } => 4,
            DroError::Csv(e) if e.is_io_error() => 4,
            _ => 2,
        }
    }
}
