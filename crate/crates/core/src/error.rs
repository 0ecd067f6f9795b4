use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the analysis and compression pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt manifest: {0}")]
    Manifest(String),

    #[error("truncated blob: matrix `{name}` needs bytes {start}..{end} but blob has {len}")]
    TruncatedBlob {
        name: String,
        start: u64,
        end: u64,
        len: u64,
    },

    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),

    #[error("duplicate matrix name `{0}`")]
    DuplicateName(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing field `{field}` in observation record")]
    MissingField { field: &'static str },

    #[error("scope violation: {0}")]
    ScopeViolation(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("non-finite entries in matrix")]
    NonFinite,

    #[error("undefined {0} for a zero matrix")]
    ZeroMatrix(&'static str),

    #[error("degenerate Gram matrix: all representations are zero")]
    DegenerateGram,

    #[error("degenerate correlation: zero variance")]
    DegenerateCorrelation,

    #[error("degenerate target: constant values")]
    DegenerateTarget,

    #[error("too few samples: need at least {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("no admissible formulas: {0}")]
    NoAdmissibleFormulas(String),

    #[error("infeasible budget: {budget} parameters cannot cover minimum {minimum}")]
    InfeasibleBudget { budget: u64, minimum: u64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by degenerate numerics rather than bad data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite
                | Error::ZeroMatrix(_)
                | Error::DegenerateGram
                | Error::DegenerateCorrelation
                | Error::DegenerateTarget
                | Error::Numerical(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
