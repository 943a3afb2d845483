use thiserror::Error;

use crate::certify::InfeasibilityReport;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, grids, tolerances or inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// A query outside the domain of a signal, trajectory or sampling set.
    #[error("domain error: {0}")]
    Domain(String),

    /// The integrator produced a non-finite state.
    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    /// Horizon too short for the requested sampling set or contraction.
    #[error("horizon error: {0}")]
    Horizon(String),

    /// The LMI synthesis found no strictly feasible point.
    #[error("LMI infeasible: {0}")]
    Infeasible(Box<InfeasibilityReport>),

    /// A result failed its own post-condition check.
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("audit error: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
