use std::process::ExitCode;

use thiserror::Error;

use shiftrisk::estimation::EstimationError;
use shiftrisk::experiments::ExperimentError;
use shiftrisk::monitor::MonitorError;
use shiftrisk::simulation::SimulationError;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_ALERT: u8 = 3;
pub const EXIT_UNINFORMATIVE: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{0}")]
    Uninformative(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Io(_) => EXIT_DATA,
            CliError::Uninformative(_) => EXIT_UNINFORMATIVE,
        })
    }

    pub fn io(context: impl std::fmt::Display, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl From<MonitorError> for CliError {
    fn from(err: MonitorError) -> Self {
        if err.is_uninformative() {
            return CliError::Uninformative(err.to_string());
        }
        match err {
            MonitorError::Config(_) | MonitorError::Tree(_) | MonitorError::MissingRisk => {
                CliError::Config(err.to_string())
            }
            MonitorError::Estimation(EstimationError::Domain { .. }) => {
                CliError::Config(err.to_string())
            }
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(err: SimulationError) -> Self {
        match err {
            SimulationError::Monitor(inner) => inner.into(),
            SimulationError::Config(_) | SimulationError::Domain { .. } => {
                CliError::Config(err.to_string())
            }
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(err: ExperimentError) -> Self {
        match err {
            ExperimentError::Monitor(inner) => inner.into(),
            ExperimentError::Simulation(inner) => inner.into(),
            ExperimentError::Estimation(EstimationError::Uninformative { .. }) => {
                CliError::Uninformative(err.to_string())
            }
            ExperimentError::LengthMismatch { .. } | ExperimentError::Empty => {
                CliError::Data(err.to_string())
            }
            _ => CliError::Config(err.to_string()),
        }
    }
}
