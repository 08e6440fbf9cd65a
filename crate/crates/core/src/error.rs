use thiserror::Error;

pub type Result<T> = std::result::Result<T, BsviError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BsviError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {message} (residual {residual:e})")]
    NumericFailure { message: String, residual: f64 },

    #[error("hypothesis violated: {condition} at t={t}, y={y:?} ({detail})")]
    HypothesisViolation {
        condition: String,
        t: f64,
        y: Vec<f64>,
        detail: String,
    },

    #[error("scheme failure: {message}")]
    SchemeFailure {
        message: String,
        /// (step index, epsilon, dt) when the failure is local to one backward step.
        location: Option<(usize, f64, f64)>,
        /// residual or sweep-difference history leading up to the failure
        history: Vec<f64>,
    },

    #[error("data violation: {0}")]
    DataViolation(String),

    #[error("invalid expression `{expr}`: {reason}")]
    Expression { expr: String, reason: String },
}

impl BsviError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        BsviError::InvalidArgument(msg.into())
    }

    pub(crate) fn dim_mismatch(what: &str, expected: usize, got: usize) -> Self {
        BsviError::InvalidArgument(format!(
            "{what}: dimension mismatch (expected {expected}, got {got})"
        ))
    }
}
