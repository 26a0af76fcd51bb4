use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Two objects that must share a state dimension do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A caller-supplied argument is outside the operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// A mathematical quantity is undefined (e.g. a divergent integral).
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or certificate violates its construction invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A query time lies beyond the simulated part of a trajectory.
    #[error("time {t} is beyond the simulated horizon {horizon}")]
    Horizon { t: f64, horizon: f64 },

    /// A sampler ran dry before the requested number of draws.
    #[error("sampler exhausted after {got} of {wanted} samples")]
    SamplerExhausted { got: usize, wanted: usize },

    /// Not enough informative points to fit a decay rate.
    #[error("rate fit window has {points} informative points (need at least {needed}): {hint}")]
    Window { points: usize, needed: usize, hint: String },

    /// An internal invariant failed (a bug, not bad input).
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
