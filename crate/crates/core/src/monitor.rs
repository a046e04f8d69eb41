//! The runtime loop: push verdicts, re-estimate the event rate, re-traverse
//! the event tree, and raise alerts when expected risk exceeds a threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{
    self, ConditionalAccuracyTable, DetectorProfile, EstimationError, PartitionStats,
    RateEstimate, VerdictTrace, DEFAULT_EPSILON, DEFAULT_TRACE_CAPACITY,
};
use crate::event_tree::{
    Accuracy, Condition, CostModel, EventTree, InterventionPolicy, Topology, TreeError,
    TreeParams,
};

pub const SNAPSHOT_FORMAT: &str = "shiftrisk-monitor-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("invalid monitor configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("assessment carries no expected risk; configure costs")]
    MissingRisk,
    #[error("snapshot format '{0}' is not a monitor snapshot")]
    UnknownFormat(String),
    #[error("snapshot version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt snapshot payload: {0}")]
    Corrupt(String),
}

impl MonitorError {
    pub fn is_uninformative(&self) -> bool {
        matches!(self, MonitorError::Estimation(EstimationError::Uninformative { .. }))
    }
}

fn default_capacity() -> usize {
    DEFAULT_TRACE_CAPACITY
}

fn default_decay() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    #[serde(default)]
    pub topology: Topology,
    pub profile: DetectorProfile,
    #[serde(default)]
    pub accuracies: BTreeMap<Condition, Accuracy>,
    /// Calibration sample counts behind `accuracies`, when known.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub support: BTreeMap<Condition, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostModel>,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default)]
    pub prior_rate: f64,
    /// Trace fill at which the prior is replaced by the trace estimate.
    /// Defaults to the capacity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_fill: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_threshold: Option<f64>,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub intervention_policy: InterventionPolicy,
}

impl MonitorConfig {
    pub fn new(
        topology: Topology,
        profile: DetectorProfile,
        accuracies: BTreeMap<Condition, Accuracy>,
    ) -> Self {
        Self {
            topology,
            profile,
            accuracies,
            support: BTreeMap::new(),
            costs: None,
            capacity: DEFAULT_TRACE_CAPACITY,
            prior_rate: 0.0,
            min_fill: None,
            risk_threshold: None,
            decay: 1.0,
            epsilon: DEFAULT_EPSILON,
            intervention_policy: InterventionPolicy::default(),
        }
    }

    /// Base-topology monitor over a two-accuracy model.
    pub fn base(profile: DetectorProfile, acc_ind: f64, acc_ood: f64) -> Self {
        let accuracies = [
            (Condition::IND, Accuracy::Known(acc_ind)),
            (Condition::OOD, Accuracy::Known(acc_ood)),
        ]
        .into_iter()
        .collect();
        Self::new(Topology::Base, profile, accuracies)
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn with_costs(mut self, costs: CostModel) -> Self {
        self.costs = Some(costs);
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.risk_threshold = Some(threshold);
        self
    }

    pub fn with_prior(mut self, prior_rate: f64, min_fill: usize) -> Self {
        self.prior_rate = prior_rate;
        self.min_fill = Some(min_fill);
        self
    }

    pub fn effective_min_fill(&self) -> usize {
        self.min_fill.unwrap_or(self.capacity)
    }

    /// Accuracy table the configuration was calibrated from.
    pub fn accuracy_table(&self) -> ConditionalAccuracyTable {
        let mut table = ConditionalAccuracyTable::default();
        for (condition, accuracy) in &self.accuracies {
            let support = self.support.get(condition).copied().unwrap_or(0);
            table.insert(
                *condition,
                PartitionStats {
                    accuracy: accuracy.value(),
                    support,
                },
            );
        }
        table
    }

    pub fn tree_params(&self, p_event: f64) -> TreeParams {
        TreeParams {
            p_event,
            profile: self.profile,
            accuracies: self.accuracies.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        if self.capacity == 0 {
            return Err(MonitorError::Config("capacity must be at least 1".into()));
        }
        let min_fill = self.effective_min_fill();
        if min_fill == 0 || min_fill > self.capacity {
            return Err(MonitorError::Config(format!(
                "min_fill must lie in [1, capacity = {}], got {min_fill}",
                self.capacity
            )));
        }
        if !(0.0..=1.0).contains(&self.prior_rate) {
            return Err(MonitorError::Config(format!(
                "prior_rate must be a probability, got {}",
                self.prior_rate
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(EstimationError::InvalidDecay(self.decay).into());
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(MonitorError::Config(format!(
                "epsilon must be a non-negative number, got {}",
                self.epsilon
            )));
        }
        if let Some(threshold) = self.risk_threshold {
            if self.costs.is_none() {
                return Err(MonitorError::Config(
                    "risk_threshold requires a cost model".into(),
                ));
            }
            if !(threshold.is_finite() && threshold >= 0.0) {
                return Err(MonitorError::Config(format!(
                    "risk_threshold must be a non-negative amount, got {threshold}"
                )));
            }
        }
        let informativeness = self.profile.informativeness();
        if !(informativeness > self.epsilon) {
            return Err(EstimationError::Uninformative {
                informativeness,
                epsilon: self.epsilon,
            }
            .into());
        }
        Ok(())
    }
}

/// One monitor output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    /// Number of verdicts ingested so far.
    pub observation: u64,
    pub p_event: RateEstimate,
    pub expected_accuracy: f64,
    pub expected_risk: Option<f64>,
    pub alert: bool,
    pub using_prior: bool,
}

/// `true` iff the assessment's expected risk strictly exceeds `threshold`.
pub fn check_threshold(assessment: &Assessment, threshold: f64) -> Result<bool, MonitorError> {
    let risk = assessment.expected_risk.ok_or(MonitorError::MissingRisk)?;
    Ok(risk > threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    config: MonitorConfig,
    trace: VerdictTrace,
    observations: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Snapshot {
    format: String,
    version: u64,
    config: MonitorConfig,
    trace: VerdictTrace,
    observations: u64,
}

#[derive(Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u64,
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Result<Self, MonitorError> {
        config.validate()?;
        let trace = VerdictTrace::new(config.capacity)?;
        let monitor = Self {
            config,
            trace,
            observations: 0,
        };
        // surface missing accuracies or costs before the first verdict
        monitor.evaluate(monitor.config.prior_rate)?;
        Ok(monitor)
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn trace(&self) -> &VerdictTrace {
        &self.trace
    }

    pub fn observations(&self) -> u64 {
        self.observations
    }

    /// Pushes a verdict without producing an assessment.
    pub fn ingest(&mut self, verdict: bool) {
        self.trace.push(verdict);
        self.observations += 1;
    }

    pub fn tree_at(&self, p_event: f64) -> Result<EventTree, MonitorError> {
        let params = self.config.tree_params(p_event);
        Ok(EventTree::build(
            self.config.topology,
            &params,
            self.config.intervention_policy,
        )?)
    }

    fn evaluate(&self, p_event: f64) -> Result<(f64, Option<f64>), MonitorError> {
        let tree = self.tree_at(p_event)?;
        let accuracy = tree.expected_accuracy()?;
        let risk = match &self.config.costs {
            Some(costs) => Some(tree.expected_risk(costs)?),
            None => None,
        };
        Ok((accuracy, risk))
    }

    /// Assessment of the current trace.
    pub fn assess(&self) -> Result<Assessment, MonitorError> {
        let using_prior = self.trace.fill() < self.config.effective_min_fill();
        let p_event = if using_prior {
            let raw = self.trace.weighted_mean(self.config.decay).unwrap_or(0.0);
            RateEstimate::prior(self.config.prior_rate, raw, self.trace.fill_fraction())
        } else {
            estimation::estimate_rate(
                &self.trace,
                &self.config.profile,
                self.config.decay,
                self.config.epsilon,
            )?
        };
        let (expected_accuracy, expected_risk) = self.evaluate(p_event.corrected)?;
        let alert = match (expected_risk, self.config.risk_threshold) {
            (Some(risk), Some(threshold)) => risk > threshold,
            _ => false,
        };
        Ok(Assessment {
            observation: self.observations,
            p_event,
            expected_accuracy,
            expected_risk,
            alert,
            using_prior,
        })
    }

    /// Ingests a verdict and assesses the updated trace.
    pub fn observe(&mut self, verdict: bool) -> Result<Assessment, MonitorError> {
        self.ingest(verdict);
        self.assess()
    }

    /// Serialises the full monitor state as a versioned JSON document.
    pub fn snapshot(&self) -> String {
        let snapshot = Snapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: u64::from(SNAPSHOT_VERSION),
            config: self.config.clone(),
            trace: self.trace.clone(),
            observations: self.observations,
        };
        serde_json::to_string(&snapshot).expect("monitor state is serialisable")
    }

    pub fn restore(payload: &str) -> Result<Self, MonitorError> {
        let header: SnapshotHeader =
            serde_json::from_str(payload).map_err(|e| MonitorError::Corrupt(e.to_string()))?;
        if header.format != SNAPSHOT_FORMAT {
            return Err(MonitorError::UnknownFormat(header.format));
        }
        if header.version != u64::from(SNAPSHOT_VERSION) {
            return Err(MonitorError::VersionMismatch {
                found: header.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let snapshot: Snapshot =
            serde_json::from_str(payload).map_err(|e| MonitorError::Corrupt(e.to_string()))?;
        if snapshot.trace.capacity() != snapshot.config.capacity {
            return Err(MonitorError::Corrupt(format!(
                "trace capacity {} differs from configured capacity {}",
                snapshot.trace.capacity(),
                snapshot.config.capacity
            )));
        }
        if snapshot.observations < snapshot.trace.fill() as u64 {
            return Err(MonitorError::Corrupt(
                "observation count is below the trace fill".into(),
            ));
        }
        let mut monitor = Monitor::new(snapshot.config)?;
        monitor.trace = snapshot.trace;
        monitor.observations = snapshot.observations;
        Ok(monitor)
    }
}
