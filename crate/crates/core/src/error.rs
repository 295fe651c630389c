use crate::backends::Role;
use crate::router::RoutePath;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Timeouts and connection failures that survived every retry.
    #[error("{role} backend transport failure: {message}")]
    RetryableTransport { role: Role, message: String },

    #[error("{role} backend failure{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    BackendFailure {
        role: Role,
        status: Option<u16>,
        message: String,
    },

    #[error("{role} backend protocol error: {message}")]
    Protocol { role: Role, message: String },

    #[error("caption unavailable: {0}")]
    CaptionUnavailable(String),

    #[error("reasoning failed: {0}")]
    ReasoningFailed(String),

    #[error("metric unavailable: {0}")]
    MetricUnavailable(String),

    #[error("{} validation error(s):\n{}", .0.len(), format_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("{path} branch failed: {source}")]
    Branch {
        path: RoutePath,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// The backend role responsible for this error, looking through branch wrappers.
    pub fn failed_role(&self) -> Option<Role> {
        match self {
            Error::RetryableTransport { role, .. }
            | Error::BackendFailure { role, .. }
            | Error::Protocol { role, .. } => Some(*role),
            Error::ReasoningFailed(_) => Some(Role::Reasoner),
            Error::CaptionUnavailable(_) => Some(Role::Captioner),
            Error::Branch { source, .. } => source.failed_role(),
            _ => None,
        }
    }

    /// True when the root cause is a model backend rather than bad input.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::RetryableTransport { .. }
            | Error::BackendFailure { .. }
            | Error::Protocol { .. }
            | Error::CaptionUnavailable(_)
            | Error::ReasoningFailed(_)
            | Error::MetricUnavailable(_) => true,
            Error::Branch { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}

/// One violation found while validating an input document.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ValidationIssue {
    /// JSON-path-like location, e.g. `samples[3].category`.
    pub field: String,
    pub message: String,
}

impl ValidationIssue {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}
