use alloc::string::String;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid sensor: {0}")]
    InvalidSensor(String),
    #[error("needs more modes: {0}")]
    NeedsMoreModes(String),
    #[error("hypothesis violated at mode n = {mode}: {reason}")]
    HypothesisViolation { mode: usize, reason: String },
    #[error("missing parameter: {0}")]
    MissingParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("ellipsoid kind mismatch: {0}")]
    KindMismatch(String),
    #[error("function not in the operator domain: {0}")]
    NotInDomain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate trajectory: {0}")]
    Degenerate(String),
}

pub type Result<T> = core::result::Result<T, Error>;
