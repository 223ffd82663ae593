use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid label set: {0}")]
    InvalidLabels(String),
    #[error("label index {index} out of range for {count} labels")]
    InvalidLabel { index: usize, count: usize },
    #[error("incompatible fields: {0}")]
    Incompatible(String),
    #[error("self pair: cell {0} paired with itself")]
    SelfPair(usize),
    #[error("degenerate truncation radius {radius} (cell size {h})")]
    DegenerateTruncation { radius: f64, h: f64 },
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("deformation step too large: |t|*Lip = {0} >= 1/2")]
    StepTooLarge(f64),
    #[error("linear solver failed to converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("unsupported labels: {0}")]
    UnsupportedLabels(String),
    #[error("brute force refused: {cells} cells exceeds the limit of {limit}")]
    OracleScaleExceeded { cells: usize, limit: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
