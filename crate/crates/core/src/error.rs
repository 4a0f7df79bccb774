use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("initial state {x0:?} is not inside the domain")]
    InitialStateOutside { x0: Vec<f64> },

    #[error("control bound must be finite and positive, got {0}")]
    UnboundedControl(f64),

    #[error("control value with norm {norm} exceeds declared bound {bound} at t={t}")]
    BoundViolation { norm: f64, bound: f64, t: f64 },

    #[error("control returned a non-finite value at t={t}")]
    NonFiniteControl { t: f64 },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("ensemble has no recorded control values")]
    MissingControls,

    #[error("no particle alive at t={t}: conditional law undefined (J = +inf regime)")]
    AllDead { t: f64 },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("empty sample set")]
    EmptySamples,

    #[error("invalid drift field: {0}")]
    InvalidField(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
