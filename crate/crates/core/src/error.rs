//! Error type shared across the pipeline.
//!
//! Variants map onto the CLI exit-code contract: `Config` → 2, `Data` and
//! `Io` → 3, `Numeric` → 4.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration: unknown keys, out-of-range parameters,
    /// incompatible shapes requested at setup time.
    Config(String),
    /// Invalid or insufficient input data: malformed files, non-monotone
    /// timestamps, empty datasets, class-support shortfalls.
    Data(String),
    /// Numerical failure at run time: non-finite values, zero divisors.
    Numeric(String),
    /// Filesystem problem, with the path that caused it.
    Io { path: String, source: std::io::Error },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Io { path, source } => write!(f, "io error on {path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
