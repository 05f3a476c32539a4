use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("spectrum is not Hermitian: asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    NonRealSpectrum { asymmetry: f64, tolerance: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} is out of range ({allowed})")]
    OutOfRange {
        what: &'static str,
        value: f64,
        allowed: String,
    },

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("numerical instability at t = {time}: {detail}")]
    Instability { time: f64, detail: String },

    #[error("evaluation refused: {0}")]
    Refused(String),

    #[error("root finding failed: {0}")]
    RootFind(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("run `{run}` failed: {detail}")]
    RunFailed { run: String, detail: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
