//! Command-line harness: scenarios, disturbance generation, the batch-reactor
//! benchmark and result export.

pub mod bench;
pub mod cli;
pub mod export;
pub mod prng;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mhect_core::Error),

    /// A named benchmark check did not hold.
    #[error("check `{name}` failed: {detail}")]
    Check { name: &'static str, detail: String, code: i32 },

    #[error("bound audit failed: {0}")]
    AuditFailed(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 configuration, 3 horizon or certificate infeasibility, 4 bound audit,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use mhect_core::Error as E;
        match self {
            CliError::Core(E::Config(_) | E::Domain(_) | E::Io(_) | E::Json(_)) => 2,
            CliError::Core(E::Horizon(_) | E::Infeasible(_)) => 3,
            CliError::Core(E::Audit(_)) | CliError::AuditFailed(_) => 4,
            CliError::Core(E::Divergence { .. } | E::Internal(_)) => 1,
            CliError::Check { code, .. } => *code,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
