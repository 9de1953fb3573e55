use thiserror::Error;

/// Errors raised across the library. Variants map one-to-one onto the
/// failure modes each operation documents.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MrdError {
    #[error("invalid dimensions: {0}")]
    Dimension(String),
    #[error("invalid axis labels: {0}")]
    InvalidAxis(String),
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error("infeasible design: {0}")]
    Infeasible(String),
    #[error("invalid combinator: {0}")]
    InvalidCombinator(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("bank does not cover type {0}")]
    Coverage(String),
    #[error("no cells of type {0}")]
    EmptyType(String),
    #[error("empty index set {0}")]
    EmptyIndexSet(String),
    #[error("lift undefined: control mean is zero")]
    LiftUndefined,
    #[error("design mismatch: {0}")]
    DesignMismatch(String),
    #[error("insufficient replication for type {ty}: {rows} rows, {cols} columns (need at least 2 each)")]
    InsufficientReplication { ty: String, rows: usize, cols: usize },
    #[error("instance too large: {0}")]
    Size(String),
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, MrdError>;

impl From<std::io::Error> for MrdError {
    fn from(e: std::io::Error) -> Self {
        MrdError::Io(e.to_string())
    }
}

impl From<csv::Error> for MrdError {
    fn from(e: csv::Error) -> Self {
        MrdError::Io(e.to_string())
    }
}
