use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A coefficient was requested exactly at one of its poles.
    #[error("{what} has a pole at t = {t}")]
    Pole { what: &'static str, t: f64 },

    /// A quantity is undefined at the requested time for a reason other than a pole.
    #[error("{what} is undefined at t = {t}: {reason}")]
    Domain {
        what: &'static str,
        t: f64,
        reason: &'static str,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors raised because a pole of a coefficient was hit.
    pub fn is_pole(&self) -> bool {
        matches!(self, Error::Pole { .. })
    }
}
