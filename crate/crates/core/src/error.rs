use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("{len} is not divisible by {by}")]
    NotDivisible { len: usize, by: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("optimality-criteria bisection failed to bracket the volume target")]
    BracketFailure,

    #[error("coverage hole at ({row}, {col})")]
    CoverageHole { row: usize, col: usize },

    #[error("all field values are zero")]
    AllZero,

    #[error("normalization factor must be positive and finite, got {0}")]
    BadFactor(f64),

    #[error("training diverged at step {step}: loss {loss:.3e}")]
    Diverged { step: usize, loss: f64 },

    #[error("batch carries no targets")]
    MissingTargets,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("fragment fingerprint mismatch: model {model}, requested {requested}")]
    FingerprintMismatch { model: String, requested: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Configuration and usage problems, as opposed to numerical or runtime
    /// failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownProblem(_)
                | Error::NotDivisible { .. }
                | Error::FingerprintMismatch { .. }
                | Error::BadFactor(_)
        )
    }
}
