use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RtnError {
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),

    #[error("signal is degenerate: {0}")]
    DegenerateSignal(&'static str),

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("empty input")]
    EmptyInput,

    #[error("at least two levels are required to form level pairs")]
    NoPairs,

    #[error("no candidate solution below the cost limit for N in {n_min}..={n_max}")]
    NonConvergence { n_min: usize, n_max: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

pub type Result<T> = std::result::Result<T, RtnError>;
