use thiserror::Error;

use crate::partition::Violation;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("op {seq} of thread {thread} depends on op {dep}, which is not older")]
    DanglingDependency {
        thread: &'static str,
        seq: u64,
        dep: u64,
    },

    #[error("invalid partition scheme: {}", fmt_violations(.0))]
    InvalidScheme(Vec<Violation>),

    #[error("scenario error at {location}: {message}")]
    Scenario { location: String, message: String },

    #[error("thread {thread} stalled on {structure} for {cycles} cycles (zero-limit path)")]
    Stall {
        thread: &'static str,
        structure: &'static str,
        cycles: u64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub fn scenario(location: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Scenario {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Stall { .. } => 3,
            SimError::Io(_) => 1,
            _ => 2,
        }
    }
}

fn fmt_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
