use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps `Usage` to exit code 2 and everything else to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {details}")]
    Shape {
        context: &'static str,
        details: String,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            context,
            details: details.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
