use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Variants map onto the CLI exit-code classes.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or geometry.
    #[error("configuration error: {0}")]
    Config(String),

    /// Array shapes or value domains do not satisfy an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed or missing input data.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The x0-prediction network could not produce a usable output.
    #[error("denoiser unavailable: {0}")]
    DenoiserUnavailable(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Contract(format!(
            "{what}: shape {got:?} does not match expected {want:?}"
        )));
    }
    Ok(())
}
