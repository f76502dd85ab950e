use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A geometric query whose precondition does not hold (point in collision, out of bounds).
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that should be symmetric positive definite is not.
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    /// Tree references that cannot be resolved (dangling node ids).
    #[error("internal consistency error: {0}")]
    InternalConsistency(String),

    /// Two already resolved robots impose different chains on the same neighbor.
    #[error("unresolvable team path: {0}")]
    UnresolvableCandidate(String),
}
