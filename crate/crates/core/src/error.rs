use thiserror::Error;

/// Errors raised anywhere in the selection pipeline.
#[derive(Debug, Error)]
pub enum CrsError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate allocation: {0}")]
    DegenerateAllocation(String),

    #[error("allocation state is empty")]
    EmptyState,

    #[error("insufficient initialization: cell (design {design}, context {context}) has {count} samples, need at least 2")]
    InsufficientInitialization {
        design: usize,
        context: usize,
        count: u64,
    },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("ground truth violation in context {context}: {message}")]
    GroundTruthViolation { context: usize, message: String },

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("trace aggregation error: {0}")]
    Aggregation(String),

    #[error("PFS saturated at checkpoint {index} (n = {n}); use a smaller window or more macro-replications")]
    Saturation { index: usize, n: u64 },

    #[error("only {usable} leading checkpoints have at least {min_events} failure events; need 4")]
    ShortWindow { usable: usize, min_events: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CrsError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CrsError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CrsError>;
