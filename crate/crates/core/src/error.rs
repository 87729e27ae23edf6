use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// A numerical routine failed to reach the requested accuracy.
    #[error("numeric failure in {op}: {msg} (achieved error estimate {achieved:e})")]
    Numeric {
        op: &'static str,
        msg: String,
        achieved: f64,
    },

    /// A time-changed path ran out of clock budget before reaching the horizon.
    #[error("horizon not reached: clock reached t = {reached} < {horizon} after {steps} steps; increase the u-budget (max_steps)")]
    HorizonNotReached {
        horizon: f64,
        reached: f64,
        steps: usize,
    },

    /// Some paths stopped before the required stopping time.
    #[error("insufficient horizon: {count} path(s) did not reach the stopping target (first indices: {first:?})")]
    InsufficientHorizon { count: usize, first: Vec<usize> },

    /// Invalid simulation or experiment configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn domain<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(LabError::Domain {
        op,
        msg: msg.into(),
    })
}
