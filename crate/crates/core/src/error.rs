use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdtrError {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("invalid fold request: {0}")]
    InvalidFolds(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("positivity violation: {0}")]
    PositivityViolation(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weight vector is not on the simplex: {0}")]
    OffSimplex(String),
    #[error("learner `{name}` failed: {reason}")]
    LearnerFailed { name: String, reason: String },
    #[error("no candidate survived fitting")]
    NoViableCandidates,
}

pub type Result<T> = std::result::Result<T, OdtrError>;
