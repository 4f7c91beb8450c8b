use thiserror::Error;

/// Error type shared by the whole toolkit.
///
/// The variants matter to callers: the CLI maps `Config` to exit code 2,
/// `Data` to exit code 3, and everything else to a stage failure (4).
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or mask dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration (bad knob values, unusable scale sets, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Dataset problems: missing files, bad manifests, corrupt images.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
