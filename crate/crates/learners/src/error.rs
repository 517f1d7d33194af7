use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("need at least {min} rows to train, got {got}")]
    TooFewRows { min: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("classification target has a single class ({0})")]
    DegenerateTarget(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{family} does not support {task}")]
    UnsupportedTask { family: String, task: String },

    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid hyperparameter {key}: {reason}")]
    InvalidHyper { key: String, reason: String },

    #[error("artifact schema version {found} is not supported (this build reads {supported})")]
    VersionMismatch { found: u64, supported: u64 },

    #[error("corrupt model artifact: {0}")]
    CorruptArtifact(String),
}
