use alloc::string::String;
use thiserror::Error;

use crate::qp::SolveStatus;

pub type Result<T> = core::result::Result<T, PadrError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PadrError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index mapping was drawn for a different reference point")]
    MappingMismatch,
    #[error("surrogate has no epigraph form")]
    NoEpigraph,
    #[error("monotone decomposition probe failed: {0}")]
    Monotonicity(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("subproblem solver stopped with status {0:?}")]
    Solver(SolveStatus),
    #[error("{count} index mappings exceed the enumeration cap {cap}; use the sampled residual")]
    CapExceeded { count: u128, cap: u64 },
    #[error("interpolation grid with {points} points is too large")]
    GridTooLarge { points: u128 },
    #[error("constraint set is infeasible")]
    Infeasible,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
}

pub(crate) fn dim(msg: impl Into<String>) -> PadrError {
    PadrError::Dimension(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> PadrError {
    PadrError::Config(msg.into())
}
