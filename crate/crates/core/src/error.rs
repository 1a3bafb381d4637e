use std::path::PathBuf;

/// Failure classes shared by every stage of the pipeline.
///
/// The CLI maps these onto process exit codes, so new variants should keep
/// that mapping in mind (see `Error::exit_code`).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated a documented precondition (bad shape, even window, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Input data on disk was malformed or inconsistent.
    #[error("ingest error: {0}")]
    Ingest(String),
    /// Configuration could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Training produced a non-finite value and was aborted.
    #[error("numeric abort: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Config(_) => 2,
            Error::Ingest(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
