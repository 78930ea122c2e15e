//! Scenario orchestration for `dwropt`: configuration files, the fine-scale
//! reference solve, and the runs behind each `dwropt` subcommand.

pub mod config;
pub mod report;
pub mod scenario;

pub use config::{preset, ExperimentConfig, PRESETS};
pub use dwropt::Error;
pub use report::RunReport;
pub use scenario::{build, compare_duals, estimate, initial_model, oracle_reference, run_scenario, Scenario};

/// An error tagged with the phase of the run it came from.
#[derive(Debug, thiserror::Error)]
#[error("{phase}: {source}")]
pub struct PhaseError {
    pub phase: &'static str,
    #[source]
    pub source: Error,
}

impl PhaseError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 4 for resource caps.
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.source)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Divisibility { .. }
        | Error::UnknownMarker(_)
        | Error::Parse(_)
        | Error::OutOfDomain { .. }
        | Error::Io(_) => 2,
        Error::ResourceCap(_) => 4,
        Error::Numerical(_)
        | Error::Singular { .. }
        | Error::NonPositive { .. }
        | Error::Dimension { .. }
        | Error::InvalidCell { .. } => 3,
    }
}

pub(crate) trait Phase<T> {
    fn phase(self, phase: &'static str) -> Result<T, PhaseError>;
}

impl<T> Phase<T> for Result<T, Error> {
    fn phase(self, phase: &'static str) -> Result<T, PhaseError> {
        self.map_err(|source| PhaseError { phase, source })
    }
}
