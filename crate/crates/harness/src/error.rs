use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] diffnea_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numerical check failed: {0}")]
    Numerical(String),
}

impl HarnessError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn format(path: &std::path::Path, message: impl std::fmt::Display) -> Self {
        Self::Format {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 3 for numerical divergence or a failed numerical
    /// check, 2 for anything the user can fix by changing inputs or paths.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(
                diffnea_core::Error::Divergence { .. } | diffnea_core::Error::NonFiniteLoss { .. },
            )
            | Self::Numerical(_) => 3,
            Self::Core(_) | Self::Format { .. } | Self::Validation(_) | Self::Io { .. } => 2,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
