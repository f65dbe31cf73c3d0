use thiserror::Error;

/// Errors surfaced by the solver. `Invariant` marks a broken internal
/// guarantee (a bug), `Contract` a subroutine called outside its stated
/// precondition, `Domain` invalid input data.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SolverError {
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
}

impl SolverError {
    pub fn invariant(msg: impl Into<String>) -> Self {
        SolverError::Invariant(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        SolverError::Contract(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        SolverError::Domain(msg.into())
    }
}
