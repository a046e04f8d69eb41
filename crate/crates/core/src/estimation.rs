//! Event-rate estimation from imperfect detector verdicts.
//!
//! A [`VerdictTrace`] keeps the most recent verdicts in a bounded queue. Its
//! positive fraction is biased by detector false positives and false
//! negatives; [`rogan_gladen`] inverts that bias using the detector's
//! [`DetectorProfile`]. Calibration helpers estimate the profile and the
//! monitored model's per-partition accuracies from labelled validation data.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_tree::{Accuracy, Condition};

/// Minimum informativeness (`tpr + tnr - 1`) accepted by the corrected estimator.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Default verdict-trace length, in batches.
pub const DEFAULT_TRACE_CAPACITY: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("insufficient data: the verdict trace is empty")]
    InsufficientData,
    #[error("detector uninformative: tpr + tnr - 1 = {informativeness} does not exceed {epsilon}")]
    Uninformative { informativeness: f64, epsilon: f64 },
    #[error("decay must lie in (0, 1], got {0}")]
    InvalidDecay(f64),
    #[error("trace capacity must be at least 1")]
    ZeroCapacity,
    #[error("{name} must be a probability in [0, 1], got {value}")]
    Domain { name: &'static str, value: f64 },
    #[error("calibration data contains no {0} samples")]
    MissingClass(LabelClass),
}

/// Ground-truth class of a labelled calibration sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelClass {
    InDistribution,
    OutOfDistribution,
}

impl fmt::Display for LabelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelClass::InDistribution => "in-distribution (is_ood = 0)",
            LabelClass::OutOfDistribution => "out-of-distribution (is_ood = 1)",
        })
    }
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<f64, EstimationError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(EstimationError::Domain { name, value })
    }
}

/// True-positive and true-negative rates of a verdict source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", deny_unknown_fields)]
pub struct DetectorProfile {
    tpr: f64,
    tnr: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    tpr: f64,
    tnr: f64,
}

impl TryFrom<RawProfile> for DetectorProfile {
    type Error = EstimationError;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        DetectorProfile::new(raw.tpr, raw.tnr)
    }
}

impl DetectorProfile {
    pub fn new(tpr: f64, tnr: f64) -> Result<Self, EstimationError> {
        Ok(Self {
            tpr: check_probability("tpr", tpr)?,
            tnr: check_probability("tnr", tnr)?,
        })
    }

    /// A detector whose verdicts always match the ground truth.
    pub fn perfect() -> Self {
        Self { tpr: 1.0, tnr: 1.0 }
    }

    pub fn tpr(&self) -> f64 {
        self.tpr
    }

    pub fn tnr(&self) -> f64 {
        self.tnr
    }

    /// Youden's J, `tpr + tnr - 1`. Zero means the verdicts carry no signal.
    pub fn informativeness(&self) -> f64 {
        self.tpr + self.tnr - 1.0
    }

    pub fn balanced_accuracy(&self) -> f64 {
        0.5 * (self.tpr + self.tnr)
    }
}

impl fmt::Display for DetectorProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(tpr={}, tnr={})", self.tpr, self.tnr)
    }
}

/// Bounded FIFO of boolean verdicts. Pushing at capacity evicts the oldest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTrace", into = "RawTrace")]
pub struct VerdictTrace {
    window: VecDeque<bool>,
    capacity: usize,
    positives: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrace {
    capacity: usize,
    verdicts: Vec<bool>,
}

impl From<VerdictTrace> for RawTrace {
    fn from(trace: VerdictTrace) -> Self {
        RawTrace {
            capacity: trace.capacity,
            verdicts: trace.window.into_iter().collect(),
        }
    }
}

impl TryFrom<RawTrace> for VerdictTrace {
    type Error = String;

    fn try_from(raw: RawTrace) -> Result<Self, Self::Error> {
        if raw.capacity == 0 {
            return Err("trace capacity must be at least 1".into());
        }
        if raw.verdicts.len() > raw.capacity {
            return Err(format!(
                "trace holds {} verdicts but its capacity is {}",
                raw.verdicts.len(),
                raw.capacity
            ));
        }
        let positives = raw.verdicts.iter().filter(|&&v| v).count();
        Ok(VerdictTrace {
            window: raw.verdicts.into(),
            capacity: raw.capacity,
            positives,
        })
    }
}

impl VerdictTrace {
    pub fn new(capacity: usize) -> Result<Self, EstimationError> {
        if capacity == 0 {
            return Err(EstimationError::ZeroCapacity);
        }
        Ok(Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            positives: 0,
        })
    }

    /// Appends a verdict, returning the evicted one if the trace was full.
    pub fn push(&mut self, verdict: bool) -> Option<bool> {
        let evicted = if self.window.len() == self.capacity {
            let old = self.window.pop_front();
            if old == Some(true) {
                self.positives -= 1;
            }
            old
        } else {
            None
        };
        self.window.push_back(verdict);
        if verdict {
            self.positives += 1;
        }
        evicted
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill(&self) -> usize {
        self.window.len()
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.capacity
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn fill_fraction(&self) -> f64 {
        self.window.len() as f64 / self.capacity as f64
    }

    /// Verdicts from oldest to newest.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = bool> + ExactSizeIterator + '_ {
        self.window.iter().copied()
    }

    pub fn clear(&mut self) {
        self.window.clear();
        self.positives = 0;
    }

    /// Fraction of positive verdicts in the window.
    pub fn empirical_mean(&self) -> Result<f64, EstimationError> {
        if self.window.is_empty() {
            return Err(EstimationError::InsufficientData);
        }
        Ok(self.positives as f64 / self.window.len() as f64)
    }

    /// Exponentially weighted positive fraction; the newest verdict has weight
    /// 1, the one before it `decay`, then `decay^2`, and so on. `decay == 1`
    /// is exactly [`VerdictTrace::empirical_mean`].
    pub fn weighted_mean(&self, decay: f64) -> Result<f64, EstimationError> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(EstimationError::InvalidDecay(decay));
        }
        if decay == 1.0 {
            return self.empirical_mean();
        }
        if self.window.is_empty() {
            return Err(EstimationError::InsufficientData);
        }
        let mut weight = 1.0;
        let mut total = 0.0;
        let mut positive = 0.0;
        for verdict in self.window.iter().rev() {
            total += weight;
            if *verdict {
                positive += weight;
            }
            weight *= decay;
        }
        Ok(positive / total)
    }
}

/// Expected positive-verdict rate for a true event rate `p_true`.
pub fn forward_bias(p_true: f64, profile: &DetectorProfile) -> f64 {
    profile.tpr() * p_true + (1.0 - profile.tnr()) * (1.0 - p_true)
}

/// A bias-corrected event-rate estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Observed positive-verdict fraction.
    pub raw_mean: f64,
    /// Corrected rate before clamping into `[0, 1]`.
    pub uncorrected: f64,
    /// Corrected rate, clamped into `[0, 1]`.
    pub corrected: f64,
    pub clamped: bool,
    pub fill_fraction: f64,
}

impl RateEstimate {
    /// An estimate that reports a fixed prior instead of a trace correction.
    pub fn prior(rate: f64, raw_mean: f64, fill_fraction: f64) -> Self {
        Self {
            raw_mean,
            uncorrected: rate,
            corrected: rate,
            clamped: false,
            fill_fraction,
        }
    }
}

/// Corrects an observed positive fraction for detector error.
///
/// Refuses detectors whose informativeness does not exceed `epsilon`; the
/// correction divides by it and its variance grows without bound as it
/// approaches zero.
pub fn rogan_gladen(
    raw_mean: f64,
    profile: &DetectorProfile,
    epsilon: f64,
) -> Result<RateEstimate, EstimationError> {
    check_probability("raw_mean", raw_mean)?;
    let informativeness = profile.informativeness();
    if !(informativeness > epsilon) {
        return Err(EstimationError::Uninformative {
            informativeness,
            epsilon,
        });
    }
    let uncorrected = (raw_mean - (1.0 - profile.tnr())) / informativeness;
    let corrected = uncorrected.clamp(0.0, 1.0);
    Ok(RateEstimate {
        raw_mean,
        uncorrected,
        corrected,
        clamped: corrected != uncorrected,
        fill_fraction: 1.0,
    })
}

/// Corrected rate from the current trace contents.
pub fn estimate_rate(
    trace: &VerdictTrace,
    profile: &DetectorProfile,
    decay: f64,
    epsilon: f64,
) -> Result<RateEstimate, EstimationError> {
    let raw = trace.weighted_mean(decay)?;
    let mut estimate = rogan_gladen(raw, profile, epsilon)?;
    estimate.fill_fraction = trace.fill_fraction();
    Ok(estimate)
}

/// Estimates tpr and tnr from `(verdict, is_ood)` pairs.
pub fn calibrate_profile<I>(labeled: I) -> Result<DetectorProfile, EstimationError>
where
    I: IntoIterator<Item = (bool, bool)>,
{
    let (mut ood, mut flagged, mut ind, mut passed) = (0u64, 0u64, 0u64, 0u64);
    for (verdict, is_ood) in labeled {
        if is_ood {
            ood += 1;
            flagged += u64::from(verdict);
        } else {
            ind += 1;
            passed += u64::from(!verdict);
        }
    }
    if ood == 0 {
        return Err(EstimationError::MissingClass(LabelClass::OutOfDistribution));
    }
    if ind == 0 {
        return Err(EstimationError::MissingClass(LabelClass::InDistribution));
    }
    DetectorProfile::new(flagged as f64 / ood as f64, passed as f64 / ind as f64)
}

/// One labelled validation sample for accuracy calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledSample {
    pub is_ood: bool,
    pub verdict: Option<bool>,
    pub is_correct: bool,
}

/// Accuracy and sample count of one data partition. Partitions without
/// samples carry no accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub accuracy: Option<f64>,
    pub support: u64,
}

impl PartitionStats {
    pub fn is_data_free(&self) -> bool {
        self.support == 0
    }
}

/// Accuracy of the monitored model on each event/verdict partition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConditionalAccuracyTable {
    entries: BTreeMap<Condition, PartitionStats>,
}

impl ConditionalAccuracyTable {
    pub fn get(&self, condition: Condition) -> Option<&PartitionStats> {
        self.entries.get(&condition)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Condition, &PartitionStats)> {
        self.entries.iter().map(|(c, s)| (*c, s))
    }

    pub fn insert(&mut self, condition: Condition, stats: PartitionStats) {
        self.entries.insert(condition, stats);
    }

    /// Tree-ready accuracies: zero-support partitions become
    /// [`Accuracy::DataFree`].
    pub fn to_tree_accuracies(&self) -> BTreeMap<Condition, Accuracy> {
        self.entries
            .iter()
            .map(|(condition, stats)| {
                let accuracy = match stats.accuracy {
                    Some(a) if stats.support > 0 => Accuracy::Known(a),
                    _ => Accuracy::DataFree,
                };
                (*condition, accuracy)
            })
            .collect()
    }
}

/// Per-partition accuracy of the monitored model.
///
/// Every sample counts towards its event-only partition (`ind` or `ood`);
/// samples with a verdict also count towards the matching event/verdict
/// partition. All six partitions appear in the result, empty ones flagged
/// with zero support.
pub fn conditional_accuracy(labeled: &[LabeledSample]) -> ConditionalAccuracyTable {
    let mut counts: BTreeMap<Condition, (u64, u64)> = Condition::ALL
        .iter()
        .map(|c| (*c, (0, 0)))
        .collect();
    for sample in labeled {
        let mut record = |condition: Condition| {
            let entry = counts.entry(condition).or_default();
            entry.0 += u64::from(sample.is_correct);
            entry.1 += 1;
        };
        record(Condition::event(sample.is_ood));
        if let Some(verdict) = sample.verdict {
            record(Condition::with_verdict(sample.is_ood, verdict));
        }
    }
    let entries = counts
        .into_iter()
        .map(|(condition, (correct, support))| {
            let accuracy = (support > 0).then(|| correct as f64 / support as f64);
            (condition, PartitionStats { accuracy, support })
        })
        .collect();
    ConditionalAccuracyTable { entries }
}
