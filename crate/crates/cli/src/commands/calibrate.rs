use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use serde::Serialize;

use shiftrisk::estimation::{calibrate_profile, conditional_accuracy, EstimationError, LabeledSample};
use shiftrisk::event_tree::{Accuracy, Condition};
use shiftrisk::DetectorProfile;

use crate::error::CliError;
use crate::GlobalArgs;

use super::emit;

pub const REQUIRED_COLUMNS: [&str; 3] = ["is_ood", "verdict", "is_correct"];

#[derive(Serialize)]
struct Fragment {
    monitor: FragmentMonitor,
}

/// Floats keep full precision here so the table survives a round trip
/// through the monitor bit for bit.
#[derive(Serialize)]
struct FragmentMonitor {
    profile: DetectorProfile,
    accuracies: BTreeMap<Condition, Accuracy>,
    support: BTreeMap<Condition, u64>,
}

fn parse_flag(text: &str) -> Option<bool> {
    match text.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledSample>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let mut index = [0usize; 3];
    for (slot, column) in index.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| {
                CliError::Data(format!("{}: missing required column '{column}'", path.display()))
            })?;
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| -> Result<Option<bool>, CliError> {
            let raw = record.get(index[k]).unwrap_or("");
            if raw.is_empty() {
                return Ok(None);
            }
            parse_flag(raw).map(Some).ok_or_else(|| {
                CliError::Data(format!(
                    "{} line {line}: column '{}' must be 0/1 or true/false, found {raw:?}",
                    path.display(),
                    REQUIRED_COLUMNS[k]
                ))
            })
        };
        let required = |k: usize| -> Result<bool, CliError> {
            field(k)?.ok_or_else(|| {
                CliError::Data(format!(
                    "{} line {line}: column '{}' is empty",
                    path.display(),
                    REQUIRED_COLUMNS[k]
                ))
            })
        };
        samples.push(LabeledSample {
            is_ood: required(0)?,
            verdict: field(1)?,
            is_correct: required(2)?,
        });
    }
    Ok(samples)
}

pub fn run(global: &GlobalArgs, input: &Path) -> Result<ExitCode, CliError> {
    let samples = read_labeled(input)?;
    let profile = calibrate_profile(
        samples
            .iter()
            .filter_map(|s| s.verdict.map(|v| (v, s.is_ood))),
    )
    .map_err(|e| match e {
        EstimationError::MissingClass(_) => CliError::Data(format!("{}: {e}", input.display())),
        other => CliError::Data(other.to_string()),
    })?;
    let table = conditional_accuracy(&samples);
    let fragment = Fragment {
        monitor: FragmentMonitor {
            profile,
            accuracies: table.to_tree_accuracies(),
            support: table.iter().map(|(c, s)| (c, s.support)).collect(),
        },
    };
    let text = toml::to_string(&fragment).map_err(|e| CliError::Data(e.to_string()))?;
    emit(global, &text)?;
    Ok(ExitCode::SUCCESS)
}
