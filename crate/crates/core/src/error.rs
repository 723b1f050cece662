use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {name} = {value} ({reason})")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// A divergence or likelihood ratio was requested between incompatible models.
    #[error("unsupported distribution pair: {0}")]
    UnsupportedPair(String),

    /// The instance is degenerate for the requested quantity (e.g. a zero constant).
    #[error("degenerate instance: {0}")]
    Degenerate(String),

    /// A configuration value is missing or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Every replication of an experiment ran to the horizon without stopping.
    #[error("estimation failed: all {replications} replications reached the horizon")]
    EstimationFailed { replications: u64 },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            reason,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
