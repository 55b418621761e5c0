use std::path::PathBuf;

/// Errors surfaced by every fallible operation in this crate.
///
/// `Dimension`, `Domain` and `Config` describe invalid inputs and map to CLI
/// exit code 1; the remaining variants are runtime failures and map to exit
/// code 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, err: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// True for errors caused by invalid input rather than a failure at runtime.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_) | Error::Domain(_) | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
