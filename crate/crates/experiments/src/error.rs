use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ExpError {
    #[error(transparent)]
    Core(#[from] elephant_core::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        source: elephant_core::Error,
    },

    #[error("data format: {0}")]
    Format(String),

    #[error("spec: {0}")]
    Spec(String),

    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, ExpError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ExpError {
    let path = path.into();
    move |source| ExpError::Io { path, source }
}
