use thiserror::Error;

/// Errors produced by the solvers, the instance builders and the harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("user index {index} out of range for {num_users} users")]
    IndexOutOfRange { index: usize, num_users: usize },

    #[error("power splitting ratio {value} of user {user} is outside (0, 1)")]
    InvalidPsRatio { user: usize, value: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("relaxed solution of user {user} is not rank one (eigenvalue ratio {ratio:.3e})")]
    RankOneViolation { user: usize, ratio: f64 },

    #[error("ZF requires N_t \u{2265} K with linearly independent channels: {0}")]
    ZfInapplicable(String),

    #[error("interference channels of user {user} span the whole antenna space")]
    NoNullSpace { user: usize },

    #[error("fixed point did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("scaling quadratic of user {user} is degenerate (c = {c:.3e})")]
    DegenerateQuadratic { user: usize, c: f64 },

    #[error("time limit exceeded")]
    TimeLimit,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
