use thiserror::Error;

/// Failures raised by the library. Configuration and I/O problems live in
/// [`crate::io::ConfigError`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: String, got: String },

    /// A scalar function was evaluated outside the set where it is defined.
    /// `boundary` is the nearest admissible value when one exists.
    #[error("{function} is undefined at {at}: {reason}")]
    Domain { function: &'static str, at: f64, boundary: Option<f64>, reason: String },

    #[error("regime mismatch: {0}")]
    Regime(String),

    #[error("root bracket failure in {context}: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    Bracket { context: &'static str, lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("N = {n} exceeds the full-solver cap of {cap}; use solve_reduced instead")]
    TooLarge { n: usize, cap: usize },

    #[error("zero columns make the correlation undefined: {0:?}")]
    DegenerateColumns(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Error {
    Error::DimensionMismatch { context, expected: expected.to_string(), got: got.to_string() }
}
