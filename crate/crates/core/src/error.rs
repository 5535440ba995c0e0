use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum EsaError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message} (byte {offset})", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error("config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl EsaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EsaError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        EsaError::Format { path: path.into(), offset, message: message.into() }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        EsaError::Config { field: field.into(), message: message.into() }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        EsaError::Invariant(message.into())
    }

    /// Process exit code category: 2 config, 3 I/O, 4 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            EsaError::Io { .. } | EsaError::Format { .. } => 3,
            EsaError::Config { .. } => 2,
            EsaError::Invariant(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, EsaError>;
