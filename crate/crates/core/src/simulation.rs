//! Synthetic deployment streams.
//!
//! Each batch is shifted independently with the configured rate. Uniform
//! batches are entirely in- or out-of-distribution; non-uniform shifted
//! batches mix in a fraction of OOD samples. Correctness of each sample is a
//! Bernoulli draw at the accuracy of the partition it came from; only the
//! per-batch counts are kept, since samples within a batch are exchangeable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{Binomial as BinomialDist, DiscreteCDF};
use thiserror::Error;

use crate::detectors::{BatchJudge, BatchTruth, DetectorError};
use crate::event_tree::Outcome;
use crate::monitor::{Assessment, Monitor, MonitorError};
use crate::presets;

/// Default stream length for sweeps, in batches.
pub const DEFAULT_HORIZON: usize = 2000;

/// Percentile of in-distribution validation batch accuracies that a batch
/// must reach to count as correct.
pub const DEFAULT_PERCENTILE: f64 = 1.0;

/// Number of simulated validation batches behind the correctness threshold.
pub const DEFAULT_VALIDATION_BATCHES: usize = 5000;

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid stream configuration: {0}")]
    Config(String),
    #[error("{name} must be a probability in [0, 1], got {value}")]
    Domain { name: String, value: f64 },
    #[error("percentile of an empty sequence")]
    EmptyInput,
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
}

fn check_probability(name: impl Into<String>, value: f64) -> Result<f64, SimulationError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(SimulationError::Domain {
            name: name.into(),
            value,
        })
    }
}

/// OOD share of a shifted non-uniform batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MixtureFraction {
    Fixed(f64),
    /// Drawn from U(0, 1) afresh for every shifted batch.
    #[default]
    Uniform,
}

impl Serialize for MixtureFraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            MixtureFraction::Fixed(f) => serializer.serialize_f64(*f),
            MixtureFraction::Uniform => serializer.serialize_str("uniform"),
        }
    }
}

impl<'de> Deserialize<'de> for MixtureFraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Value(f64),
            Name(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Value(f) => Ok(MixtureFraction::Fixed(f)),
            Repr::Name(s) if s == "uniform" => Ok(MixtureFraction::Uniform),
            Repr::Name(s) => Err(serde::de::Error::custom(format!(
                "mixture_fraction must be a probability or \"uniform\", got \"{s}\""
            ))),
        }
    }
}

fn default_batch_size() -> usize {
    1
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub shift_rate: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_true")]
    pub uniform: bool,
    #[serde(default)]
    pub mixture_fraction: MixtureFraction,
    #[serde(default)]
    pub seed: u64,
}

impl StreamConfig {
    pub fn new(batch_size: usize, shift_rate: f64, horizon: usize, seed: u64) -> Self {
        Self {
            batch_size,
            shift_rate,
            horizon,
            uniform: true,
            mixture_fraction: MixtureFraction::Uniform,
            seed,
        }
    }

    pub fn mixed(mut self, fraction: MixtureFraction) -> Self {
        self.uniform = false;
        self.mixture_fraction = fraction;
        self
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.batch_size == 0 {
            return Err(SimulationError::Config("batch_size must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(SimulationError::Config("horizon must be at least 1".into()));
        }
        check_probability("shift_rate", self.shift_rate)?;
        if let MixtureFraction::Fixed(f) = self.mixture_fraction {
            check_probability("mixture_fraction", f)?;
        }
        Ok(())
    }
}

/// One OOD data source with its own model accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodFold {
    pub name: String,
    pub accuracy: f64,
    pub weight: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFold {
    name: String,
    accuracy: f64,
    #[serde(default)]
    weight: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    ind: f64,
    folds: Vec<RawFold>,
}

/// Ground-truth per-sample accuracy of the monitored model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOracle")]
pub struct AccuracyOracle {
    ind: f64,
    folds: Vec<OodFold>,
}

impl TryFrom<RawOracle> for AccuracyOracle {
    type Error = SimulationError;

    fn try_from(raw: RawOracle) -> Result<Self, Self::Error> {
        let weighted = raw.folds.iter().filter(|f| f.weight.is_some()).count();
        if weighted != 0 && weighted != raw.folds.len() {
            return Err(SimulationError::Config(
                "either every OOD fold has a weight or none does".into(),
            ));
        }
        let uniform = 1.0 / raw.folds.len().max(1) as f64;
        let folds = raw
            .folds
            .into_iter()
            .map(|f| OodFold {
                weight: f.weight.unwrap_or(uniform),
                name: f.name,
                accuracy: f.accuracy,
            })
            .collect();
        AccuracyOracle::new(raw.ind, folds)
    }
}

impl AccuracyOracle {
    pub fn new(ind: f64, folds: Vec<OodFold>) -> Result<Self, SimulationError> {
        check_probability("ind accuracy", ind)?;
        if folds.is_empty() {
            return Err(SimulationError::Config("at least one OOD fold is required".into()));
        }
        let mut total = 0.0;
        for fold in &folds {
            check_probability(format!("accuracy of fold {}", fold.name), fold.accuracy)?;
            check_probability(format!("weight of fold {}", fold.name), fold.weight)?;
            total += fold.weight;
        }
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(SimulationError::Config(format!(
                "OOD fold weights sum to {total}, not 1"
            )));
        }
        Ok(Self { ind, folds })
    }

    /// Equally weighted folds.
    pub fn uniform<'a>(
        ind: f64,
        folds: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Self, SimulationError> {
        let folds: Vec<(&str, f64)> = folds.into_iter().collect();
        let weight = 1.0 / folds.len().max(1) as f64;
        Self::new(
            ind,
            folds
                .into_iter()
                .map(|(name, accuracy)| OodFold {
                    name: name.to_string(),
                    accuracy,
                    weight,
                })
                .collect(),
        )
    }

    /// A single OOD source.
    pub fn single(ind: f64, ood: f64) -> Result<Self, SimulationError> {
        Self::uniform(ind, [("ood", ood)])
    }

    /// The polyp case study with its three OOD folds.
    pub fn polyp() -> Self {
        Self::uniform(presets::POLYP_IND_ACCURACY, presets::POLYP_OOD_FOLDS)
            .expect("preset oracle is valid")
    }

    pub fn ind(&self) -> f64 {
        self.ind
    }

    pub fn folds(&self) -> &[OodFold] {
        &self.folds
    }

    /// Weight-averaged OOD accuracy.
    pub fn ood(&self) -> f64 {
        self.folds.iter().map(|f| f.weight * f.accuracy).sum()
    }

    fn sample_fold<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        for (i, fold) in self.folds.iter().enumerate() {
            cumulative += fold.weight;
            if u < cumulative {
                return i;
            }
        }
        self.folds.len() - 1
    }
}

/// One batch of a deployment stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub index: usize,
    pub size: usize,
    pub uniform: bool,
    /// Number of OOD samples.
    pub ood_samples: usize,
    /// OOD fold the shifted samples came from.
    pub fold: Option<usize>,
    /// Number of correctly handled samples.
    pub correct: usize,
}

impl Batch {
    pub fn truth(&self) -> BatchTruth {
        if self.uniform {
            BatchTruth::Uniform {
                is_ood: self.ood_samples > 0,
                size: self.size,
            }
        } else {
            BatchTruth::Mixture {
                ood_samples: self.ood_samples,
                size: self.size,
            }
        }
    }

    /// Event state of the batch; mixed batches follow the majority rule.
    pub fn is_ood(&self) -> bool {
        self.truth().is_ood().unwrap_or(false)
    }

    pub fn ood_fraction(&self) -> f64 {
        self.ood_samples as f64 / self.size as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.size as f64
    }
}

/// `true` iff the realized batch accuracy reaches `threshold`.
pub fn batch_correct(batch: &Batch, threshold: f64) -> bool {
    batch.accuracy() >= threshold
}

fn binomial(n: usize, p: f64) -> Binomial {
    Binomial::new(n as u64, p).expect("probabilities are validated on construction")
}

/// Seeded, finite stream of batches.
#[derive(Debug, Clone)]
pub struct StreamGenerator {
    config: StreamConfig,
    oracle: AccuracyOracle,
    rng: ChaCha8Rng,
    next_index: usize,
}

impl StreamGenerator {
    pub fn new(config: StreamConfig, oracle: AccuracyOracle) -> Result<Self, SimulationError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            oracle,
            rng,
            next_index: 0,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    /// Generates a batch at the current position, ignoring the horizon.
    pub fn next_batch(&mut self) -> Batch {
        let size = self.config.batch_size;
        let shifted = self.rng.random::<f64>() < self.config.shift_rate;
        let fold = shifted.then(|| self.oracle.sample_fold(&mut self.rng));
        let ood_samples = match (shifted, self.config.uniform) {
            (false, _) => 0,
            (true, true) => size,
            (true, false) => {
                let m = match self.config.mixture_fraction {
                    MixtureFraction::Fixed(f) => f,
                    MixtureFraction::Uniform => self.rng.random::<f64>(),
                };
                binomial(size, m).sample(&mut self.rng) as usize
            }
        };
        let ood_correct = match fold {
            Some(f) if ood_samples > 0 => {
                binomial(ood_samples, self.oracle.folds[f].accuracy).sample(&mut self.rng)
            }
            _ => 0,
        };
        let ind_correct = binomial(size - ood_samples, self.oracle.ind).sample(&mut self.rng);
        let batch = Batch {
            index: self.next_index,
            size,
            uniform: self.config.uniform,
            ood_samples,
            fold,
            correct: (ood_correct + ind_correct) as usize,
        };
        self.next_index += 1;
        batch
    }
}

impl Iterator for StreamGenerator {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next_index >= self.config.horizon {
            return None;
        }
        Some(self.next_batch())
    }
}

/// The whole stream at once.
pub fn generate_stream(
    config: &StreamConfig,
    oracle: &AccuracyOracle,
) -> Result<Vec<Batch>, SimulationError> {
    Ok(StreamGenerator::new(config.clone(), oracle.clone())?.collect())
}

/// Percentile of `values` with linear interpolation between order
/// statistics.
pub fn ind_percentile_threshold(values: &[f64], percentile: f64) -> Result<f64, SimulationError> {
    if values.is_empty() {
        return Err(SimulationError::EmptyInput);
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(SimulationError::Config(format!(
            "percentile must lie in [0, 100], got {percentile}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = percentile / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Batch-correctness threshold from simulated in-distribution validation
/// batches. The result is never below one sample's worth of accuracy, so a
/// batch with no correct samples is never counted as correct.
pub fn calibrate_batch_threshold(
    oracle: &AccuracyOracle,
    batch_size: usize,
    percentile: f64,
    validation_batches: usize,
    seed: u64,
) -> Result<f64, SimulationError> {
    if batch_size == 0 {
        return Err(SimulationError::Config("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = binomial(batch_size, oracle.ind);
    let accuracies: Vec<f64> = (0..validation_batches)
        .map(|_| dist.sample(&mut rng) as f64 / batch_size as f64)
        .collect();
    let threshold = ind_percentile_threshold(&accuracies, percentile)?;
    Ok(threshold.max(1.0 / batch_size as f64))
}

fn reach_probability(batch_size: usize, accuracy: f64, threshold: f64) -> f64 {
    let needed = (threshold * batch_size as f64 - 1e-9).ceil().max(0.0) as u64;
    if needed == 0 {
        return 1.0;
    }
    let dist = BinomialDist::new(accuracy, batch_size as u64)
        .expect("probabilities are validated on construction");
    dist.sf(needed - 1)
}

/// Probability that a uniform batch of the given event state is counted as
/// correct under `threshold`.
pub fn batch_correct_probability(
    oracle: &AccuracyOracle,
    is_ood: bool,
    batch_size: usize,
    threshold: f64,
) -> f64 {
    if is_ood {
        oracle
            .folds
            .iter()
            .map(|f| f.weight * reach_probability(batch_size, f.accuracy, threshold))
            .sum()
    } else {
        reach_probability(batch_size, oracle.ind, threshold)
    }
}

/// Per-batch record of a deployment run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub index: usize,
    pub is_ood: bool,
    pub ood_fraction: f64,
    pub verdict: bool,
    pub batch_accuracy: f64,
    pub batch_correct: bool,
    /// Cost of the leaf this batch landed in, when costs are configured.
    pub realized_cost: Option<f64>,
    pub assessment: Assessment,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeploymentTrace {
    pub records: Vec<DeploymentRecord>,
}

impl DeploymentTrace {
    fn suffix(&self, window: usize) -> &[DeploymentRecord] {
        let start = self.records.len().saturating_sub(window);
        &self.records[start..]
    }

    /// Fraction of correct batches among the last `window` batches.
    pub fn realized_accuracy(&self, window: usize) -> Option<f64> {
        let tail = self.suffix(window);
        if tail.is_empty() {
            return None;
        }
        Some(tail.iter().filter(|r| r.batch_correct).count() as f64 / tail.len() as f64)
    }

    /// Mean realized cost among the last `window` batches.
    pub fn realized_risk(&self, window: usize) -> Option<f64> {
        let tail = self.suffix(window);
        if tail.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for record in tail {
            total += record.realized_cost?;
        }
        Some(total / tail.len() as f64)
    }

    /// Fraction of OOD batches among the last `window` batches.
    pub fn ood_fraction(&self, window: usize) -> Option<f64> {
        let tail = self.suffix(window);
        if tail.is_empty() {
            return None;
        }
        Some(tail.iter().filter(|r| r.is_ood).count() as f64 / tail.len() as f64)
    }
}

/// Drives one stream through a detector and a monitor, one step at a time.
pub struct Deployment<'a, J: BatchJudge> {
    pub detector: &'a mut J,
    pub monitor: &'a mut Monitor,
    pub threshold: f64,
}

impl<'a, J: BatchJudge> Deployment<'a, J> {
    pub fn step(&mut self, batch: &Batch) -> Result<DeploymentRecord, SimulationError> {
        let truth = batch.truth();
        let is_ood = truth.is_ood()?;
        let verdict = self.detector.judge_batch(truth)?;
        let assessment = self.monitor.observe(verdict)?;
        let correct = batch_correct(batch, self.threshold);
        let config = self.monitor.config();
        let outcome = Outcome::realized(config.topology, is_ood, verdict, correct);
        let realized_cost = config
            .costs
            .as_ref()
            .and_then(|c| c.cost_of(outcome).ok());
        Ok(DeploymentRecord {
            index: batch.index,
            is_ood,
            ood_fraction: batch.ood_fraction(),
            verdict,
            batch_accuracy: batch.accuracy(),
            batch_correct: correct,
            realized_cost,
            assessment,
        })
    }
}

/// Runs a full stream, assessing after every batch.
pub fn run_deployment<J, I>(
    stream: I,
    detector: &mut J,
    monitor: &mut Monitor,
    threshold: f64,
) -> Result<DeploymentTrace, SimulationError>
where
    J: BatchJudge,
    I: IntoIterator<Item = Batch>,
{
    let mut deployment = Deployment {
        detector,
        monitor,
        threshold,
    };
    let records = stream
        .into_iter()
        .map(|batch| deployment.step(&batch))
        .collect::<Result<_, _>>()?;
    Ok(DeploymentTrace { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::SyntheticDetector;
    use crate::estimation::DetectorProfile;
    use crate::event_tree::{build_base_tree, TreeParams};
    use crate::monitor::MonitorConfig;

    fn stream(rate: f64, horizon: usize, seed: u64) -> Vec<Batch> {
        generate_stream(&StreamConfig::new(1, rate, horizon, seed), &AccuracyOracle::polyp())
            .unwrap()
    }

    #[test]
    fn extreme_rates() {
        assert!(stream(0.0, 500, 1).iter().all(|b| !b.is_ood()));
        assert!(stream(1.0, 500, 1).iter().all(|b| b.is_ood()));
    }

    #[test]
    fn ood_fraction_matches_rate() {
        let s = stream(0.3, 10_000, 2);
        let frac = s.iter().filter(|b| b.is_ood()).count() as f64 / s.len() as f64;
        assert!((frac - 0.3).abs() < 0.012, "{frac}");
    }

    #[test]
    fn uniform_batches_never_mix() {
        let config = StreamConfig::new(16, 0.4, 2000, 3);
        for b in generate_stream(&config, &AccuracyOracle::polyp()).unwrap() {
            assert!(b.ood_samples == 0 || b.ood_samples == b.size);
            assert!(b.correct <= b.size);
        }
    }

    #[test]
    fn mixed_batches_use_majority_truth() {
        let config = StreamConfig::new(16, 1.0, 2000, 4).mixed(MixtureFraction::Uniform);
        let batches = generate_stream(&config, &AccuracyOracle::polyp()).unwrap();
        assert!(batches.iter().any(|b| b.ood_samples > 0 && b.ood_samples < b.size));
        for b in &batches {
            assert_eq!(b.is_ood(), 2 * b.ood_samples >= b.size);
        }
        let fixed = StreamConfig::new(8, 1.0, 50, 4).mixed(MixtureFraction::Fixed(0.0));
        assert!(generate_stream(&fixed, &AccuracyOracle::polyp())
            .unwrap()
            .iter()
            .all(|b| !b.is_ood()));
    }

    #[test]
    fn streams_are_deterministic() {
        assert_eq!(stream(0.4, 1000, 9), stream(0.4, 1000, 9));
        assert_ne!(stream(0.4, 1000, 9), stream(0.4, 1000, 10));
    }

    #[test]
    fn fold_sampling_honours_weights() {
        let oracle = AccuracyOracle::new(
            0.9,
            vec![
                OodFold { name: "a".into(), accuracy: 0.5, weight: 0.2 },
                OodFold { name: "b".into(), accuracy: 0.4, weight: 0.8 },
            ],
        )
        .unwrap();
        let s = generate_stream(&StreamConfig::new(1, 1.0, 20_000, 5), &oracle).unwrap();
        let n = s.len() as f64;
        let frac_a = s.iter().filter(|b| b.fold == Some(0)).count() as f64 / n;
        let sigma = (0.2 * 0.8 / n).sqrt();
        assert!((frac_a - 0.2).abs() < 3.0 * sigma, "{frac_a}");
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(StreamConfig::new(0, 0.3, 10, 0).validate().is_err());
        assert!(StreamConfig::new(1, 1.3, 10, 0).validate().is_err());
        assert!(StreamConfig::new(1, 0.3, 0, 0).validate().is_err());
        assert!(StreamConfig::new(1, 0.3, 10, 0)
            .mixed(MixtureFraction::Fixed(2.0))
            .validate()
            .is_err());
        assert!(AccuracyOracle::new(
            0.9,
            vec![OodFold { name: "a".into(), accuracy: 0.5, weight: 0.7 }]
        )
        .is_err());
    }

    #[test]
    fn oracle_weights_default_to_uniform() {
        let oracle: AccuracyOracle = serde_json::from_str(
            r#"{"ind": 0.9, "folds": [{"name": "a", "accuracy": 0.5}, {"name": "b", "accuracy": 0.3}]}"#,
        )
        .unwrap();
        assert_eq!(oracle.folds()[1].weight, 0.5);
        assert!((oracle.ood() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(ind_percentile_threshold(&[0.9; 20], 1.0).unwrap(), 0.9);
        assert_eq!(ind_percentile_threshold(&[0.0, 1.0], 50.0).unwrap(), 0.5);
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        assert!((ind_percentile_threshold(&grid, 1.0).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(ind_percentile_threshold(&[], 1.0), Err(SimulationError::EmptyInput));
    }

    #[test]
    fn batch_correct_rule() {
        let batch = |correct, size| Batch {
            index: 0,
            size,
            uniform: true,
            ood_samples: 0,
            fold: None,
            correct,
        };
        assert!(batch_correct(&batch(9, 10), 0.7));
        assert!(batch_correct(&batch(7, 10), 0.7));
        assert!(!batch_correct(&batch(6, 10), 0.7));
        assert!(batch_correct(&batch(1, 1), 0.5));
        assert!(!batch_correct(&batch(0, 1), 0.5));
    }

    #[test]
    fn single_sample_threshold_is_per_sample_correctness() {
        let t = calibrate_batch_threshold(&AccuracyOracle::polyp(), 1, 1.0, 1000, 0).unwrap();
        assert_eq!(t, 1.0);
        let p = batch_correct_probability(&AccuracyOracle::polyp(), false, 1, t);
        assert!((p - 0.9).abs() < 1e-12);
    }

    #[test]
    fn correct_probability_matches_monte_carlo() {
        let oracle = AccuracyOracle::polyp();
        let t = calibrate_batch_threshold(&oracle, 16, 1.0, 5000, 1).unwrap();
        let config = StreamConfig::new(16, 0.5, 20_000, 6);
        let batches = generate_stream(&config, &oracle).unwrap();
        for is_ood in [false, true] {
            let subset: Vec<&Batch> = batches.iter().filter(|b| b.is_ood() == is_ood).collect();
            let n = subset.len() as f64;
            let freq = subset.iter().filter(|b| batch_correct(b, t)).count() as f64 / n;
            let p = batch_correct_probability(&oracle, is_ood, 16, t);
            let sigma = (p * (1.0 - p) / n).sqrt().max(1e-3);
            assert!((freq - p).abs() < 4.0 * sigma, "{is_ood}: {freq} vs {p}");
        }
    }

    fn deployment(
        oracle: &AccuracyOracle,
        rate: f64,
        horizon: usize,
        seed: u64,
    ) -> DeploymentTrace {
        let config = MonitorConfig::base(DetectorProfile::perfect(), oracle.ind(), oracle.ood())
            .with_capacity(100);
        let mut monitor = Monitor::new(config).unwrap();
        let mut detector = SyntheticDetector::new(DetectorProfile::perfect(), seed + 1);
        let stream = StreamGenerator::new(StreamConfig::new(1, rate, horizon, seed), oracle.clone())
            .unwrap();
        run_deployment(stream, &mut detector, &mut monitor, 1.0).unwrap()
    }

    #[test]
    fn perfect_composition_accuracy() {
        let oracle = AccuracyOracle::single(1.0, 0.0).unwrap();
        let trace = deployment(&oracle, 0.3, 5000, 7);
        let acc = trace.realized_accuracy(5000).unwrap();
        let ood = trace.ood_fraction(5000).unwrap();
        assert!((acc - (1.0 - ood)).abs() < 1e-12);
        assert!((acc - 0.7).abs() < 0.03);
    }

    #[test]
    fn polyp_deployment_matches_base_tree() {
        let oracle = AccuracyOracle::polyp();
        let trace = deployment(&oracle, 0.3, 10_000, 8);
        let tree = build_base_tree(&TreeParams::base(0.3, oracle.ind(), oracle.ood())).unwrap();
        let realized = trace.realized_accuracy(10_000).unwrap();
        assert!((realized - tree.expected_accuracy().unwrap()).abs() < 0.02, "{realized}");
    }

    #[test]
    fn deployments_are_deterministic() {
        let oracle = AccuracyOracle::polyp();
        assert_eq!(deployment(&oracle, 0.4, 800, 3), deployment(&oracle, 0.4, 800, 3));
    }
}
