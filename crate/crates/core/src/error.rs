use thiserror::Error;

use crate::orchestrator::Phase;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("state error: {message}")]
    State {
        message: String,
        /// Phase the caller still has to complete, when the error is an ordering violation.
        pending: Option<Phase>,
    },

    #[error("not authorized: {0}")]
    Authorization(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("gateway unavailable: {0}")]
    GatewayUnavailable(String),

    #[error("provider error {code}: {message}")]
    Provider { code: String, message: String },

    #[error("storage error: {0}")]
    Storage(String),

    #[error("corrupt event log: {0}")]
    CorruptLog(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn not_found(kind: &'static str, id: impl ToString) -> Self {
        Error::NotFound {
            kind,
            id: id.to_string(),
        }
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State {
            message: msg.into(),
            pending: None,
        }
    }

    pub fn pending(msg: impl Into<String>, phase: Phase) -> Self {
        Error::State {
            message: msg.into(),
            pending: Some(phase),
        }
    }

    /// Stable machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::NotFound { .. } => "not_found",
            Error::Conflict(_) => "conflict",
            Error::State { .. } => "state",
            Error::Authorization(_) => "unauthorized",
            Error::Undefined(_) => "undefined",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::GatewayUnavailable(_) => "gateway_unavailable",
            Error::Provider { .. } => "provider_error",
            Error::Storage(_) => "storage",
            Error::CorruptLog(_) => "corrupt_log",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Storage(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Storage(format!("json: {err}"))
    }
}
