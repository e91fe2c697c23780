use thiserror::Error;

/// Errors raised by problem construction, simulation and the adaptive driver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("start point is not strictly inside the domain")]
    StartOutsideDomain,

    #[error("simulation failure: non-finite state at step {step} (t = {time})")]
    NonFiniteState { step: u64, time: f64 },

    #[error("kurtosis undefined: {0}")]
    UndefinedKurtosis(&'static str),

    #[error("reference point out of range: {0}")]
    OutOfRange(String),

    #[error("bias not converged at the maximum level {max_level} (last estimate {estimate})")]
    LevelCap { max_level: usize, estimate: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
