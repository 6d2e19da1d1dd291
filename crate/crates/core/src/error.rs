use thiserror::Error;

use crate::conic::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error(
        "matrix is not positive semidefinite (eigenvalue {eigenvalue:e}, largest {largest:e})"
    )]
    NotPsd { eigenvalue: f64, largest: f64 },

    #[error("matrix is not invertible: {0}")]
    NotInvertible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{step} subproblem not solved (solver status {status:?})")]
    StepInfeasible {
        step: &'static str,
        status: SolveStatus,
    },

    #[error("rank-one recovery failed: no feasible candidate")]
    RecoveryFailed,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("experiment aborted: {0}")]
    Aborted(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
