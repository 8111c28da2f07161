use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("path not found: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] sragan_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    /// `2` for bad configuration or missing inputs, `1` for everything that
    /// fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::MissingPath(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { context: path.display().to_string(), source }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

pub(crate) fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(AppError::MissingPath(path.to_path_buf()))
    }
}
