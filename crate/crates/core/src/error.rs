use thiserror::Error;

/// Errors raised by the analysis, simulation and feedback routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A configuration field failed validation.
    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    /// A probability argument was outside `[0, 1]` (or not a number).
    #[error("probability `{name}` = {value} is outside [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },

    /// A stage index `u` was outside `[0, n]`.
    #[error("stage u = {stage} is outside [0, {users}]")]
    StageOutOfRange { stage: usize, users: usize },

    /// The normalized unresolved fraction must lie in `(0, 1]`.
    #[error("fraction x = {0} is outside (0, 1]")]
    FractionOutOfRange(f64),

    /// A degree distribution failed validation.
    #[error("invalid degree distribution: {0}")]
    InvalidDistribution(String),

    /// The exact analysis would need more live states than allowed.
    #[error("decoder state budget exceeded: {states} live states (projected {projected}), budget {budget}")]
    BudgetExceeded {
        states: usize,
        projected: u128,
        budget: usize,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidProbability { name, value })
    }
}
