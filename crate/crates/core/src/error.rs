//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Bisection was asked to solve on an interval without a sign change.
    #[error("no sign change on [{lo}, {hi}] (f(lo)={flo}, f(hi)={fhi})")]
    Bracket { lo: f64, hi: f64, flo: f64, fhi: f64 },

    /// The requested accuracy target or latency budget cannot be met.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An exact enumeration would exceed its declared size limit.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A lookup-table query for a key that was never estimated.
    #[error("missing lookup-table key: {0}")]
    MissingKey(String),

    /// A config or model file failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
