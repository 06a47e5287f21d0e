use std::path::PathBuf;

/// Crate-wide error type.
///
/// The variants map onto the process exit codes used by the CLI: bad
/// configuration or unusable inputs (`Config`, `Io`) exit with 2, malformed
/// data files (`Format`, `File`) with 3, and numeric failures such as
/// non-finite losses or gradients (`Numeric`) with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    /// A structural problem in a data file, located by byte offset.
    #[error("{}: {msg} (byte offset {offset})", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    /// A whole-file problem (bad magic, version, checksum, ...).
    #[error("{}: {msg}", path.display())]
    File { path: PathBuf, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Io { .. } => 2,
            Error::Format { .. } | Error::File { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
