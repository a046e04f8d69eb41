//! Run configuration: one TOML document, optionally assembled from several
//! files that are deep-merged in order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use shiftrisk::detectors::ThresholdDetector;
use shiftrisk::estimation::DetectorProfile;
use shiftrisk::event_tree::CostModel;
use shiftrisk::experiments::{AccuracySweepOptions, CbaSpec, RiskCurveSpec, SweepGrid};
use shiftrisk::monitor::MonitorConfig;
use shiftrisk::simulation::{AccuracyOracle, StreamConfig};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<StreamConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<AccuracyOracle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostModel>,
    /// Profile of the simulated detector, when it differs from the profile
    /// the monitor was calibrated with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorProfile>,
    /// Rule turning recorded scores into verdicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_threshold: Option<ThresholdDetector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<MonitorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub grid: SweepGrid,
    #[serde(default)]
    pub accuracy: AccuracySweepOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_curve: Option<RiskCurveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cba: Option<CbaSpec>,
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(existing)), toml::Value::Table(incoming)) => {
                merge(existing, incoming)
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Reads and merges `paths` in order; later files override earlier ones.
    pub fn load(paths: &[PathBuf]) -> Result<Self, CliError> {
        if paths.is_empty() {
            return Err(CliError::Usage("at least one --config file is required".into()));
        }
        let mut merged = toml::Table::new();
        for path in paths {
            merge(&mut merged, read_table(path)?);
        }
        let config: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if let Some(stream) = &self.stream {
            stream.validate().map_err(|e| CliError::Config(format!("[stream] {e}")))?;
        }
        if let Some(sweep) = &self.sweep {
            sweep
                .grid
                .validate()
                .map_err(|e| CliError::Config(format!("[sweep.grid] {e}")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is serialisable")
    }

    pub fn stream(&self) -> Result<&StreamConfig, CliError> {
        self.stream
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [stream] section".into()))
    }

    pub fn oracle(&self) -> Result<&AccuracyOracle, CliError> {
        self.oracle
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [oracle] section".into()))
    }

    pub fn costs(&self) -> Result<&CostModel, CliError> {
        self.costs
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [costs] section".into()))
    }

    pub fn sweep(&self) -> Result<&SweepSection, CliError> {
        self.sweep
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [sweep] section".into()))
    }

    /// The monitor configuration with top-level costs attached. Empty
    /// accuracies are left for the caller to fill.
    pub fn monitor_config(&self) -> Result<MonitorConfig, CliError> {
        let mut config = self
            .monitor
            .clone()
            .ok_or_else(|| CliError::Config("missing [monitor] section".into()))?;
        match (&config.costs, &self.costs) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "costs are set both in [costs] and [monitor.costs]".into(),
                ))
            }
            (None, Some(costs)) => config.costs = Some(costs.clone()),
            _ => {}
        }
        Ok(config)
    }
}
