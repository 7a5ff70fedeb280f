use std::path::PathBuf;

/// Errors produced by the estimation, coding and optimization routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bits per packet must be at least 1")]
    ZeroBits,
    #[error("half-bits truncation needs an even packet size, got {0} bits")]
    OddBits(u32),
    #[error("unstable process: spectral radius {0:.6} >= 1, supply y_power and P0 explicitly")]
    UnstableProcess(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid relay configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("too many links for exhaustive enumeration: {links} > {max}")]
    TooManyLinks { links: usize, max: usize },
    #[error("too many sensors for the exact pattern sum: {sensors} > {max}")]
    TooManySensors { sensors: usize, max: usize },
    #[error("invalid pattern distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,
    #[error("stability policy `{0}` depends on the error covariance; only channel-state policies are admissible")]
    PolicyNeedsCovariance(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
