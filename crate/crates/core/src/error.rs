use crate::renewal::ladder::LadderSample;

/// Errors raised by the simulators and estimators.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// A sampler detected that one of its own construction guarantees broke.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("level {level} never crossed; largest log-velocity seen {max_seen}")]
    NotReached { level: f64, max_seen: f64 },

    #[error("{what}: budget of {budget} steps exhausted")]
    BudgetExceeded { what: String, budget: usize, partial: Option<Box<LadderSample>> },

    #[error("degenerate ensemble: effective sample size {ess:.1} below {threshold:.1}")]
    DegenerateEnsemble { ess: f64, threshold: f64, partial: Option<Box<crate::renewal::ensemble::Ensemble>> },

    #[error("truncation box holds {captured:.6} of an estimated total mass {total:.6}")]
    Truncation { captured: f64, total: f64 },

    #[error("shift to level {level} needs back entries the window does not have (feasible depth {feasible_depth})")]
    TruncatedShift { level: f64, feasible_depth: i64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
