use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("time {t} outside of [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("state space of {states} states exceeds capacity {capacity}")]
    Capacity { states: usize, capacity: usize },

    #[error("singular likelihood ratio: reference rate vanishes on a realized jump at t={time}, site {site}")]
    Singular { time: f64, site: usize },

    #[error("explicit step left (-1,1) at t={time}: reduce dt (currently {dt})")]
    Stability { time: f64, dt: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("{value} is not a multiple of the magnetization quantum {quantum}")]
    Quantization { value: f64, quantum: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
