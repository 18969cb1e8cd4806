use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("format error in {}: {reason}", file.display())]
    Format { file: PathBuf, reason: String },

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("refusing to overwrite existing artifact at {}", .0.display())]
    Exists(PathBuf),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit codes by failure class.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PREREQUISITE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

impl Error {
    /// [`EXIT_CONFIG`] for bad configuration, arguments or a refused
    /// overwrite; [`EXIT_PREREQUISITE`] for missing or unusable inputs;
    /// [`EXIT_RUNTIME`] for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Range(_) | Error::Exists(_) => EXIT_CONFIG,
            Error::Prerequisite(_) | Error::Format { .. } => EXIT_PREREQUISITE,
            _ => EXIT_RUNTIME,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            reason: reason.into(),
        }
    }
}
