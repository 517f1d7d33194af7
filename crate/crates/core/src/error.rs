use opiaid_learners::LearnerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pain score {0} outside 0..=10")]
    OutOfRange(i64),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("all severity weights are zero")]
    AllZeroWeights,
    #[error("malformed series: {0}")]
    MalformedSeries(String),
    #[error("unknown opiate `{0}`")]
    UnknownOpiate(String),
    #[error("invalid dose grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {min} records, got {got}")]
    TooSmall { min: usize, got: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no rule matches pain {pain}, severity {severity:.3}, respiratory depression {respiratory_depression}")]
    NoMatchingRule {
        pain: u8,
        severity: f64,
        respiratory_depression: bool,
    },
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("malformed record {row}: {reason}")]
    MalformedRecord { row: usize, reason: String },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn field(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
