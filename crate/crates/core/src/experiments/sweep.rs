//! Rate-error and accuracy-error sweeps over detector profiles, shift
//! rates, trace lengths, batch sizes and batch uniformity.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{derive_seed, ErrorStats};
use super::ExperimentError;
use crate::detectors::{detector_grid, BatchJudge, SyntheticDetector};
use crate::estimation::{rogan_gladen, DetectorProfile, VerdictTrace, DEFAULT_EPSILON};
use crate::event_tree::{Accuracy, Condition, InterventionPolicy, Topology};
use crate::monitor::{Monitor, MonitorConfig};
use crate::simulation::{
    batch_correct, batch_correct_probability, calibrate_batch_threshold, AccuracyOracle,
    MixtureFraction, StreamConfig, StreamGenerator, DEFAULT_HORIZON, DEFAULT_PERCENTILE,
    DEFAULT_VALIDATION_BATCHES,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEEDS_PER_CELL: usize = 30;

// seed-path tags, kept distinct so streams, detectors and calibration data
// never share a random sequence
const TAG_STREAM: u64 = 1;
const TAG_DETECTOR: u64 = 2;
const TAG_CALIBRATION: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorAxis {
    /// Lattice of `(tpr, tnr)` pairs above a balanced-accuracy floor.
    Grid { step: f64, ba_floor: f64 },
    /// Explicit profiles.
    List(Vec<DetectorProfile>),
}

impl Default for DetectorAxis {
    fn default() -> Self {
        DetectorAxis::Grid {
            step: 0.1,
            ba_floor: 0.5,
        }
    }
}

impl DetectorAxis {
    pub fn profiles(&self) -> Result<Vec<DetectorProfile>, ExperimentError> {
        match self {
            DetectorAxis::Grid { step, ba_floor } => Ok(detector_grid(*step, *ba_floor)?),
            DetectorAxis::List(list) => Ok(list.clone()),
        }
    }
}

fn default_rates() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn default_batch_sizes() -> Vec<usize> {
    vec![1]
}

fn default_trace_lengths() -> Vec<usize> {
    vec![100]
}

fn default_uniformity() -> Vec<bool> {
    vec![true]
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_seeds() -> usize {
    DEFAULT_SEEDS_PER_CELL
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// Axes of a sweep. Every cell of the cartesian product is run
/// `seeds_per_cell` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default)]
    pub detectors: DetectorAxis,
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_trace_lengths")]
    pub trace_lengths: Vec<usize>,
    #[serde(default = "default_uniformity")]
    pub uniformity: Vec<bool>,
    #[serde(default)]
    pub mixture_fraction: MixtureFraction,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_seeds")]
    pub seeds_per_cell: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            rates: default_rates(),
            detectors: DetectorAxis::default(),
            batch_sizes: default_batch_sizes(),
            trace_lengths: default_trace_lengths(),
            uniformity: default_uniformity(),
            mixture_fraction: MixtureFraction::default(),
            horizon: DEFAULT_HORIZON,
            seeds_per_cell: DEFAULT_SEEDS_PER_CELL,
            master_seed: 0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// One seeded repetition of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub profile: DetectorProfile,
    pub rate: f64,
    pub trace_length: usize,
    pub batch_size: usize,
    pub uniform: bool,
    pub seed_index: usize,
    pub seed: u64,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::Config(msg));
        if self.rates.is_empty()
            || self.batch_sizes.is_empty()
            || self.trace_lengths.is_empty()
            || self.uniformity.is_empty()
        {
            return fail("every sweep axis needs at least one value".into());
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return fail(format!("rates must be probabilities, got {r}"));
        }
        if self.batch_sizes.contains(&0) {
            return fail("batch sizes must be at least 1".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if let Some(w) = self
            .trace_lengths
            .iter()
            .find(|w| **w == 0 || **w > self.horizon)
        {
            return fail(format!(
                "trace lengths must lie in [1, horizon = {}], got {w}",
                self.horizon
            ));
        }
        if self.seeds_per_cell == 0 {
            return fail("seeds_per_cell must be at least 1".into());
        }
        if let MixtureFraction::Fixed(f) = self.mixture_fraction {
            if !(0.0..=1.0).contains(&f) {
                return fail(format!("mixture_fraction must be a probability, got {f}"));
            }
        }
        Ok(())
    }

    /// All cells in axis order: detector, rate, trace length, batch size,
    /// uniformity, seed. Seeds depend only on the cell's coordinates.
    pub fn cells(&self) -> Result<Vec<SweepCell>, ExperimentError> {
        self.validate()?;
        let profiles = self.detectors.profiles()?;
        let mut cells = Vec::new();
        for profile in &profiles {
            for &rate in &self.rates {
                for &trace_length in &self.trace_lengths {
                    for &batch_size in &self.batch_sizes {
                        for &uniform in &self.uniformity {
                            for seed_index in 0..self.seeds_per_cell {
                                let seed = derive_seed(
                                    self.master_seed,
                                    &[
                                        profile.tpr().to_bits(),
                                        profile.tnr().to_bits(),
                                        rate.to_bits(),
                                        trace_length as u64,
                                        batch_size as u64,
                                        u64::from(uniform),
                                        seed_index as u64,
                                    ],
                                );
                                cells.push(SweepCell {
                                    profile: *profile,
                                    rate,
                                    trace_length,
                                    batch_size,
                                    uniform,
                                    seed_index,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    fn stream_config(&self, cell: &SweepCell) -> StreamConfig {
        StreamConfig {
            batch_size: cell.batch_size,
            shift_rate: cell.rate,
            horizon: self.horizon,
            uniform: cell.uniform,
            mixture_fraction: self.mixture_fraction,
            seed: derive_seed(cell.seed, &[TAG_STREAM]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    RateError,
    AccuracyError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: SweepCell,
    pub method: ErrorStats,
    pub baseline: Option<ErrorStats>,
    /// Why the cell produced no estimates, if it did not.
    pub refused: Option<String>,
}

impl CellResult {
    fn refused(cell: SweepCell, reason: String) -> Self {
        Self {
            cell,
            method: ErrorStats::default(),
            baseline: None,
            refused: Some(reason),
        }
    }
}

/// Flat per-cell row for tabular output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub tpr: f64,
    pub tnr: f64,
    pub balanced_accuracy: f64,
    pub rate: f64,
    pub trace_length: usize,
    pub batch_size: usize,
    pub uniform: bool,
    pub seed_index: usize,
    pub seed: u64,
    pub comparisons: u64,
    pub mae: Option<f64>,
    pub mean_signed_error: Option<f64>,
    pub baseline_mae: Option<f64>,
    pub baseline_mean_signed_error: Option<f64>,
    pub refused: bool,
}

/// Sums of cell statistics over a group of cells.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub cells: usize,
    pub refusals: usize,
    pub method: ErrorStats,
    pub baseline: ErrorStats,
}

impl Aggregate {
    pub fn add(&mut self, result: &CellResult) {
        self.cells += 1;
        if result.refused.is_some() {
            self.refusals += 1;
        }
        self.method.merge(&result.method);
        if let Some(b) = &result.baseline {
            self.baseline.merge(b);
        }
    }

    pub fn merge(&mut self, other: &Aggregate) {
        self.cells += other.cells;
        self.refusals += other.refusals;
        self.method.merge(&other.method);
        self.baseline.merge(&other.baseline);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub schema_version: u32,
    pub kind: SweepKind,
    pub cells: Vec<CellResult>,
}

impl ErrorReport {
    pub fn records(&self) -> Vec<CellRecord> {
        self.cells
            .iter()
            .map(|r| CellRecord {
                tpr: r.cell.profile.tpr(),
                tnr: r.cell.profile.tnr(),
                balanced_accuracy: r.cell.profile.balanced_accuracy(),
                rate: r.cell.rate,
                trace_length: r.cell.trace_length,
                batch_size: r.cell.batch_size,
                uniform: r.cell.uniform,
                seed_index: r.cell.seed_index,
                seed: r.cell.seed,
                comparisons: r.method.n,
                mae: r.method.mae(),
                mean_signed_error: r.method.mean_signed(),
                baseline_mae: r.baseline.and_then(|b| b.mae()),
                baseline_mean_signed_error: r.baseline.and_then(|b| b.mean_signed()),
                refused: r.refused.is_some(),
            })
            .collect()
    }

    /// Groups cells by `key`, in order of first appearance.
    pub fn aggregate_by<K, F>(&self, key: F) -> Vec<(K, Aggregate)>
    where
        K: PartialEq,
        F: Fn(&SweepCell) -> K,
    {
        let mut groups: Vec<(K, Aggregate)> = Vec::new();
        for result in &self.cells {
            let k = key(&result.cell);
            match groups.iter_mut().find(|(g, _)| *g == k) {
                Some((_, agg)) => agg.add(result),
                None => {
                    let mut agg = Aggregate::default();
                    agg.add(result);
                    groups.push((k, agg));
                }
            }
        }
        groups
    }

    pub fn total(&self) -> Aggregate {
        let mut agg = Aggregate::default();
        for result in &self.cells {
            agg.add(result);
        }
        agg
    }
}

/// Corrected-rate error against the nominal shift rate, evaluated after
/// every batch once the trace is full.
pub fn rate_error_sweep(grid: &SweepGrid) -> Result<ErrorReport, ExperimentError> {
    let cells = grid.cells()?;
    // correctness plays no part in rate estimation
    let oracle = AccuracyOracle::single(1.0, 0.0)?;
    let results = cells
        .into_par_iter()
        .map(|cell| rate_cell(grid, cell, &oracle))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ErrorReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: SweepKind::RateError,
        cells: results,
    })
}

fn rate_cell(
    grid: &SweepGrid,
    cell: SweepCell,
    oracle: &AccuracyOracle,
) -> Result<CellResult, ExperimentError> {
    let informativeness = cell.profile.informativeness();
    if !(informativeness > grid.epsilon) {
        return Ok(CellResult::refused(
            cell,
            format!("detector uninformative: tpr + tnr - 1 = {informativeness}"),
        ));
    }
    let stream = StreamGenerator::new(grid.stream_config(&cell), oracle.clone())?;
    let mut detector = SyntheticDetector::new(cell.profile, derive_seed(cell.seed, &[TAG_DETECTOR]));
    let mut trace = VerdictTrace::new(cell.trace_length)?;
    let mut stats = ErrorStats::default();
    for batch in stream {
        trace.push(detector.judge_batch(batch.truth())?);
        if trace.is_full() {
            let estimate = rogan_gladen(trace.empirical_mean()?, &cell.profile, grid.epsilon)?;
            stats.push(cell.rate, estimate.corrected);
        }
    }
    Ok(CellResult {
        cell,
        method: stats,
        baseline: None,
        refused: None,
    })
}

fn default_percentile() -> f64 {
    DEFAULT_PERCENTILE
}

fn default_validation_batches() -> usize {
    DEFAULT_VALIDATION_BATCHES
}

/// How the accuracy sweep builds its monitors and scores batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracySweepOptions {
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub intervention_policy: InterventionPolicy,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default = "default_validation_batches")]
    pub validation_batches: usize,
}

impl Default for AccuracySweepOptions {
    fn default() -> Self {
        Self {
            topology: Topology::Base,
            intervention_policy: InterventionPolicy::default(),
            percentile: DEFAULT_PERCENTILE,
            validation_batches: DEFAULT_VALIDATION_BATCHES,
        }
    }
}

/// Batch-level correctness rule and the resulting per-event probabilities
/// for one batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchCalibration {
    pub batch_size: usize,
    pub threshold: f64,
    pub p_ind: f64,
    pub p_ood: f64,
}

impl BatchCalibration {
    pub fn new(
        oracle: &AccuracyOracle,
        batch_size: usize,
        percentile: f64,
        validation_batches: usize,
        seed: u64,
    ) -> Result<Self, ExperimentError> {
        let threshold =
            calibrate_batch_threshold(oracle, batch_size, percentile, validation_batches, seed)?;
        Ok(Self {
            batch_size,
            threshold,
            p_ind: batch_correct_probability(oracle, false, batch_size, threshold),
            p_ood: batch_correct_probability(oracle, true, batch_size, threshold),
        })
    }
}

/// Tree accuracies for a detector whose verdicts are independent of model
/// correctness given the event state.
pub fn tree_accuracies(topology: Topology, p_ind: f64, p_ood: f64) -> BTreeMap<Condition, Accuracy> {
    let (ind, ood) = match topology {
        Topology::Base => (Condition::IND, Condition::OOD),
        Topology::Rv => (Condition::IND_NEG, Condition::OOD_NEG),
    };
    [(ind, Accuracy::Known(p_ind)), (ood, Accuracy::Known(p_ood))]
        .into_iter()
        .collect()
}

/// Whether a realized batch counts as a success under the tree's accuracy
/// semantics; `None` if it is left out of the accuracy.
pub fn realized_success(
    topology: Topology,
    policy: InterventionPolicy,
    verdict: bool,
    correct: bool,
) -> Option<bool> {
    match (topology, verdict, policy) {
        (Topology::Base, _, _) | (Topology::Rv, false, _) => Some(correct),
        (Topology::Rv, true, InterventionPolicy::CountsAsCorrect) => Some(true),
        (Topology::Rv, true, InterventionPolicy::Excluded) => None,
    }
}

/// Monitor expected accuracy against realized accuracy over the trailing
/// trace-length window, with the constant baseline alongside.
pub fn accuracy_error_sweep(
    grid: &SweepGrid,
    oracle: &AccuracyOracle,
    options: &AccuracySweepOptions,
) -> Result<ErrorReport, ExperimentError> {
    let cells = grid.cells()?;
    let calibrations = grid
        .batch_sizes
        .iter()
        .map(|&bs| {
            BatchCalibration::new(
                oracle,
                bs,
                options.percentile,
                options.validation_batches,
                derive_seed(grid.master_seed, &[TAG_CALIBRATION, bs as u64]),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let results = cells
        .into_par_iter()
        .map(|cell| {
            let calibration = calibrations
                .iter()
                .find(|c| c.batch_size == cell.batch_size)
                .expect("every batch size is calibrated");
            accuracy_cell(grid, cell, oracle, options, calibration)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ErrorReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: SweepKind::AccuracyError,
        cells: results,
    })
}

fn accuracy_cell(
    grid: &SweepGrid,
    cell: SweepCell,
    oracle: &AccuracyOracle,
    options: &AccuracySweepOptions,
    calibration: &BatchCalibration,
) -> Result<CellResult, ExperimentError> {
    let mut config = MonitorConfig::new(
        options.topology,
        cell.profile,
        tree_accuracies(options.topology, calibration.p_ind, calibration.p_ood),
    )
    .with_capacity(cell.trace_length);
    config.epsilon = grid.epsilon;
    config.intervention_policy = options.intervention_policy;
    let mut monitor = match Monitor::new(config) {
        Ok(m) => m,
        Err(e) if e.is_uninformative() => return Ok(CellResult::refused(cell, e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let stream = StreamGenerator::new(grid.stream_config(&cell), oracle.clone())?;
    let mut detector = SyntheticDetector::new(cell.profile, derive_seed(cell.seed, &[TAG_DETECTOR]));
    let window_len = cell.trace_length;
    let mut window: VecDeque<Option<bool>> = VecDeque::with_capacity(window_len + 1);
    let (mut successes, mut counted) = (0usize, 0usize);
    let mut method = ErrorStats::default();
    let mut baseline = ErrorStats::default();
    for batch in stream {
        let verdict = detector.judge_batch(batch.truth())?;
        monitor.ingest(verdict);
        let correct = batch_correct(&batch, calibration.threshold);
        let success = realized_success(options.topology, options.intervention_policy, verdict, correct);
        window.push_back(success);
        if let Some(s) = success {
            counted += 1;
            successes += usize::from(s);
        }
        if window.len() > window_len {
            if let Some(Some(s)) = window.pop_front() {
                counted -= 1;
                successes -= usize::from(s);
            }
        }
        if window.len() == window_len && counted > 0 {
            let realized = successes as f64 / counted as f64;
            let assessment = monitor.assess()?;
            method.push(realized, assessment.expected_accuracy);
            baseline.push(realized, calibration.p_ind);
        }
    }
    Ok(CellResult {
        cell,
        method,
        baseline: Some(baseline),
        refused: None,
    })
}
