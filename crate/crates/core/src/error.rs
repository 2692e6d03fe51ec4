use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto validation, numeric, and I/O failure classes.
#[derive(Debug, Error)]
pub enum PcmcError {
    #[error("invalid rate matrix: {0}")]
    InvalidRateMatrix(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("empty subset")]
    EmptySubset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PcmcError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PcmcError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error class: 2 validation, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PcmcError::Singular(_) | PcmcError::Numeric(_) => 3,
            PcmcError::Io { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PcmcError>;
