use thiserror::Error;

/// Errors raised by geometry construction, sampling and estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the set where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration invariant is violated. `constraint` names the rule.
    #[error("invariant violated ({constraint}): {message}")]
    Invariant { constraint: String, message: String },

    /// Caller-supplied inputs do not satisfy an operation's precondition.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A walk exceeded its step budget. Such walks are never discarded.
    #[error("walk did not converge within {steps} steps")]
    NonConvergence { steps: u64 },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    /// A weight allocation request cannot be satisfied at the named node.
    #[error("constraint violation at node {node}: {message}")]
    ConstraintViolation { node: String, message: String },
}

impl Error {
    pub(crate) fn invariant(constraint: &str, message: impl Into<String>) -> Self {
        Error::Invariant {
            constraint: constraint.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
