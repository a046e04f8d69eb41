//! Evaluation protocol: error metrics, sweeps, risk curves and the
//! cost-benefit surface.

pub mod metrics;
pub mod risk;
pub mod sweep;

use thiserror::Error;

use crate::detectors::DetectorError;
use crate::estimation::EstimationError;
use crate::event_tree::TreeError;
use crate::monitor::MonitorError;
use crate::simulation::SimulationError;

pub use metrics::{derive_seed, mae, mean_signed_error, BaselineEstimator, ErrorStats};
pub use risk::{
    cba_surface, crossing_rate, risk_curve, CbaSpec, CbaSurface, RiskCurve, RiskCurveSpec,
};
pub use sweep::{
    accuracy_error_sweep, rate_error_sweep, AccuracySweepOptions, DetectorAxis, ErrorReport,
    SweepGrid,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("sequences differ in length: {truth} truth values, {estimate} estimates")]
    LengthMismatch { truth: usize, estimate: usize },
    #[error("error metric of empty sequences")]
    Empty,
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
}
