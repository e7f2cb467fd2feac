use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("absolute continuity violated at x = {x}: {which} density vanishes")]
    AbsoluteContinuity { x: f64, which: &'static str },

    #[error("divergence integrand is non-finite at x = {x}")]
    DivergenceInfinite { x: f64 },

    #[error("degenerate policy: no-send region carries zero pre-change mass")]
    DegeneratePolicy,

    #[error("no companion bound: left endpoint a = {a} leaves less than 1 - epsilon = {required} pre-change mass")]
    NoSolution { a: f64, required: f64 },

    #[error("infeasible energy budget epsilon = {epsilon}: no grid point admits the required region mass")]
    InfeasibleBudget { epsilon: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("calibration failure: {0}")]
    CalibrationFailure(String),

    #[error("malformed policy record: {0}")]
    MalformedRecord(String),
}

pub type Result<T> = std::result::Result<T, Error>;
