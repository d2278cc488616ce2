use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("sample value {value} is not a point of a {points}-point space")]
    PointOutOfRange { value: usize, points: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("sample size {n} is smaller than the kernel arity {k}")]
    DegenerateSample { n: usize, k: usize },

    #[error("net of size {actual} exceeds the declared budget {allowed:.3}")]
    BudgetExceeded { actual: usize, allowed: f64 },

    #[error("expansion residual {residual:e} exceeds tolerance {tolerance:e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },

    #[error("exhaustive enumeration over {n} signs refused (limit {limit})")]
    EnumerationRefused { n: usize, limit: usize },

    #[error("chaining hypothesis n*sigma^2 >= (x/sigma)^(2/k) violated")]
    NotApplicable,

    #[error("too few qualifying tail points for a fit: {found} (need {needed})")]
    TooFewPoints { found: usize, needed: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
