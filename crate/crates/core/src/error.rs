use thiserror::Error;

pub type Result<T, E = CarveError> = std::result::Result<T, E>;

/// Broad failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum CarveError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("SVD failed to converge after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Format(#[from] crate::io::FormatError),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CarveError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Self::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Self::Config(_) | Self::Input(_) | Self::Json(_) => ErrorKind::Config,
            Self::Shape { .. } | Self::NonFinite { .. } | Self::Convergence { .. } => {
                ErrorKind::Numeric
            }
            Self::Format(_) | Self::Io(_) => ErrorKind::Io,
        }
    }
}
