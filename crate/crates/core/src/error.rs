use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown operator `{0}`")]
    UnknownOperator(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("feature index {index} out of bounds for {ncols} columns")]
    Arity { index: usize, ncols: usize },

    #[error("model expects {expected} features, input has {found}")]
    ColumnCount { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("quantile level must lie in the open interval (0, 1), got {0}")]
    InvalidQuantile(f64),

    #[error("target range is degenerate (max == min)")]
    DegenerateRange,

    #[error("{0}")]
    InsufficientData(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration problems are distinguished from data problems by the CLI.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidQuantile(_))
    }
}
