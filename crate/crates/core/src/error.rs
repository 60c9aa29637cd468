use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Mismatched vector or parameter dimensions.
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// Invalid configuration values.
    #[error("configuration error: {0}")]
    Config(String),
    /// A precondition of an operation does not hold for its inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A target lies outside the group edges.
    #[error("target {y} of sample {id} lies outside the group edges [{lo}, {hi}]")]
    Range { id: u64, y: f64, lo: f64, hi: f64 },
    /// A non-finite or degenerate value appeared in a numeric computation.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
