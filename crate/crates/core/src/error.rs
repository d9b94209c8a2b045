use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{arg}`: expected {expected}, found {found}")]
    Dimension {
        arg: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("response dimension {d} exceeds the {what} cap of {cap}")]
    Cap {
        what: &'static str,
        d: usize,
        cap: usize,
    },

    #[error("site {site} out of range for response dimension {d}")]
    SiteOutOfRange { site: usize, d: usize },

    #[error("invalid neighbourhood mask: {0}")]
    InvalidMask(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{what} needs at least {needed} samples, got {got}")]
    TooFewSamples {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("{what} is not negative definite (eigenvalues {eigenvalues:?})")]
    NotNegativeDefinite {
        what: &'static str,
        eigenvalues: Vec<f64>,
    },

    #[error("{0} requires a normalized instrumental density (exact h mode)")]
    RatioMode(&'static str),

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
