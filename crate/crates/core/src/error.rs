use thiserror::Error;

/// Errors raised by the numerical and statistical operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("truncation level above peak ({eps} >= {peak})")]
    TruncationAbovePeak { eps: f64, peak: f64 },

    #[error("level must be positive (got {0})")]
    NonPositiveLevel(f64),

    #[error("empty sample set")]
    EmptySamples,

    #[error("below detection threshold: {x} < {x0}")]
    BelowThreshold { x: f64, x0: f64 },

    #[error("no mass in fit window")]
    NoMassInWindow,

    #[error("flat window")]
    FlatWindow,

    #[error("increase A_max: {0}")]
    Nonconvergence(String),

    #[error("x = {x} outside density grid (0, {a_max}]")]
    OutsideGrid { x: f64, a_max: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
