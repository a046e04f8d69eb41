use std::fs::{self, File};
use std::io::{self, BufRead, BufReader};
use std::process::ExitCode;

use serde::{Deserialize, Serialize};

use shiftrisk::detectors::ThresholdDetector;
use shiftrisk::monitor::{Assessment, Monitor};

use crate::error::{CliError, EXIT_ALERT};
use crate::output::{self, CsvLines, Format, LineSink};
use crate::{GlobalArgs, MonitorArgs};

use super::load_config;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessmentRow {
    pub observation: u64,
    pub verdict: bool,
    pub raw_mean: f64,
    pub uncorrected: f64,
    pub p_hat: f64,
    pub clamped: bool,
    pub fill_fraction: f64,
    pub expected_accuracy: f64,
    pub expected_risk: Option<f64>,
    pub alert: bool,
    pub using_prior: bool,
}

impl AssessmentRow {
    fn new(verdict: bool, a: &Assessment) -> Self {
        Self {
            observation: a.observation,
            verdict,
            raw_mean: a.p_event.raw_mean,
            uncorrected: a.p_event.uncorrected,
            p_hat: a.p_event.corrected,
            clamped: a.p_event.clamped,
            fill_fraction: a.p_event.fill_fraction,
            expected_accuracy: a.expected_accuracy,
            expected_risk: a.expected_risk,
            alert: a.alert,
            using_prior: a.using_prior,
        }
    }
}

enum Reading {
    Verdicts,
    Scores(ThresholdDetector),
}

impl Reading {
    fn parse(&self, line: &str, number: usize) -> Result<bool, CliError> {
        match self {
            Reading::Verdicts => match line {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(CliError::Data(format!(
                    "line {number}: expected a verdict 0 or 1, found {line:?}"
                ))),
            },
            Reading::Scores(rule) => {
                let score: f64 = line.parse().map_err(|_| {
                    CliError::Data(format!("line {number}: expected a score, found {line:?}"))
                })?;
                rule.judge_score(score)
                    .map_err(|e| CliError::Data(format!("line {number}: {e}")))
            }
        }
    }
}

pub fn run(global: &GlobalArgs, args: &MonitorArgs) -> Result<ExitCode, CliError> {
    let config = if global.configs.is_empty() && args.resume.is_some() {
        None
    } else {
        Some(load_config(global)?)
    };
    let mut monitor = match (&args.resume, &config) {
        (Some(path), _) => {
            let payload = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
            Monitor::restore(&payload)?
        }
        (None, Some(config)) => Monitor::new(config.monitor_config()?)?,
        (None, None) => unreachable!("configuration is loaded unless resuming"),
    };
    let reading = if args.scores {
        let rule = config
            .as_ref()
            .and_then(|c| c.score_threshold)
            .ok_or_else(|| CliError::Config("--scores needs a [score_threshold] section".into()))?;
        Reading::Scores(rule)
    } else {
        Reading::Verdicts
    };

    let input: Box<dyn BufRead> = match &args.input {
        Some(path) => Box::new(BufReader::new(
            File::open(path).map_err(|e| CliError::io(path.display(), e))?,
        )),
        None => Box::new(io::stdin().lock()),
    };
    let mut sink = LineSink::open(global.output.as_ref())?;
    let mut csv = CsvLines::new();
    let mut alerted = false;
    for (i, line) in input.lines().enumerate() {
        let number = i + 1;
        let line = line.map_err(|e| CliError::io(format!("line {number}"), e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let verdict = reading.parse(line, number)?;
        let assessment = monitor.observe(verdict)?;
        alerted |= assessment.alert;
        let row = AssessmentRow::new(verdict, &assessment);
        let text = match global.format {
            Format::Csv => csv.render(&row)?,
            Format::Structured => output::to_json_line(&row),
        };
        sink.line(&text)?;
    }
    if let Some(path) = &args.snapshot {
        output::write_file(path, &monitor.snapshot())?;
    }
    Ok(if alerted {
        ExitCode::from(EXIT_ALERT)
    } else {
        ExitCode::SUCCESS
    })
}
