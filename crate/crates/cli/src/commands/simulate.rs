use std::process::ExitCode;

use serde::{Deserialize, Serialize};

use shiftrisk::detectors::SyntheticDetector;
use shiftrisk::experiments::derive_seed;
use shiftrisk::experiments::sweep::{tree_accuracies, BatchCalibration};
use shiftrisk::monitor::Monitor;
use shiftrisk::simulation::{
    run_deployment, DeploymentRecord, StreamGenerator, DEFAULT_PERCENTILE,
    DEFAULT_VALIDATION_BATCHES,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{self, Format};
use crate::GlobalArgs;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

const THRESHOLD_STREAM: u64 = 1;
const DETECTOR_STREAM: u64 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub index: usize,
    pub is_ood: bool,
    pub ood_fraction: f64,
    pub verdict: bool,
    pub batch_accuracy: f64,
    pub batch_correct: bool,
    pub p_hat: f64,
    pub expected_accuracy: f64,
    pub expected_risk: Option<f64>,
    pub alert: bool,
    pub using_prior: bool,
    pub realized_cost: Option<f64>,
}

impl From<&DeploymentRecord> for TraceRow {
    fn from(r: &DeploymentRecord) -> Self {
        Self {
            index: r.index,
            is_ood: r.is_ood,
            ood_fraction: r.ood_fraction,
            verdict: r.verdict,
            batch_accuracy: r.batch_accuracy,
            batch_correct: r.batch_correct,
            p_hat: r.assessment.p_event.corrected,
            expected_accuracy: r.assessment.expected_accuracy,
            expected_risk: r.assessment.expected_risk,
            alert: r.assessment.alert,
            using_prior: r.assessment.using_prior,
            realized_cost: r.realized_cost,
        }
    }
}

#[derive(Serialize)]
struct TraceDocument<'a> {
    schema_version: u32,
    batch_threshold: f64,
    records: &'a [DeploymentRecord],
}

pub fn run(global: &GlobalArgs, config: &RunConfig) -> Result<ExitCode, CliError> {
    let path = global
        .output
        .as_ref()
        .ok_or_else(|| CliError::Usage("simulate needs --output".into()))?;
    let stream = config.stream()?.clone();
    let oracle = config.oracle()?.clone();
    let calibration = BatchCalibration::new(
        &oracle,
        stream.batch_size,
        DEFAULT_PERCENTILE,
        DEFAULT_VALIDATION_BATCHES,
        derive_seed(stream.seed, &[THRESHOLD_STREAM]),
    )?;
    let mut monitor_config = config.monitor_config()?;
    if monitor_config.accuracies.is_empty() {
        monitor_config.accuracies =
            tree_accuracies(monitor_config.topology, calibration.p_ind, calibration.p_ood);
    }
    let profile = config.detector.unwrap_or(monitor_config.profile);
    let mut monitor = Monitor::new(monitor_config)?;
    let mut detector = SyntheticDetector::new(profile, derive_seed(stream.seed, &[DETECTOR_STREAM]));
    let batches = StreamGenerator::new(stream, oracle)?;
    let trace = run_deployment(batches, &mut detector, &mut monitor, calibration.threshold)?;

    let text = match global.format {
        Format::Csv => {
            let rows: Vec<TraceRow> = trace.records.iter().map(TraceRow::from).collect();
            output::to_csv(&rows)?
        }
        Format::Structured => output::to_json(&TraceDocument {
            schema_version: TRACE_SCHEMA_VERSION,
            batch_threshold: calibration.threshold,
            records: &trace.records,
        }),
    };
    output::write_file(path, &text)?;
    Ok(ExitCode::SUCCESS)
}
