use thiserror::Error;

/// Errors shared by every numerical routine in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A precondition on the inputs does not hold (the computation would be
    /// well-defined syntactically but meaningless, e.g. a failure bound whose
    /// direction is wrong).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A series did not converge within the configured term budget.
    /// Carries the partial sum and a conservative bound on the missing tail.
    #[error("series did not converge within {max_terms} terms (partial sum {partial:e}, tail bound {tail_bound:e})")]
    Truncation {
        partial: f64,
        tail_bound: f64,
        max_terms: usize,
    },

    /// A root search could not bracket a sign change.
    #[error("bracket failure: no sign change found in [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
