use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("{0}")]
    Core(#[from] fourpi_core::Error),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),
}

pub(crate) fn io<T>(path: &std::path::Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
