//! Risk against shift rate, with and without acting on detector verdicts,
//! and the risk surface over classifier and detector quality.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::derive_seed;
use super::sweep::{tree_accuracies, BatchCalibration, REPORT_SCHEMA_VERSION};
use super::ExperimentError;
use crate::detectors::{BatchJudge, SyntheticDetector};
use crate::estimation::DetectorProfile;
use crate::event_tree::{
    Condition, CostModel, EventTree, InterventionPolicy, Outcome, Param, Topology, TreeParams,
};
use crate::monitor::{Monitor, MonitorConfig};
use crate::simulation::{
    batch_correct, AccuracyOracle, StreamConfig, StreamGenerator, DEFAULT_HORIZON,
    DEFAULT_PERCENTILE, DEFAULT_VALIDATION_BATCHES,
};

const TAG_STREAM: u64 = 11;
const TAG_DETECTOR: u64 = 12;
const TAG_CALIBRATION: u64 = 13;

/// Spacing of the default rate grid.
pub const RATE_STEP: f64 = 0.05;

fn default_rates() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * RATE_STEP).collect()
}

fn default_profile() -> DetectorProfile {
    DetectorProfile::new(0.95, 0.55).expect("valid profile")
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_seeds() -> usize {
    super::sweep::DEFAULT_SEEDS_PER_CELL
}

fn default_batch_size() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskCurveSpec {
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default = "default_profile")]
    pub profile: DetectorProfile,
    pub threshold: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
}

impl RiskCurveSpec {
    pub fn new(threshold: f64) -> Self {
        Self {
            rates: default_rates(),
            profile: default_profile(),
            threshold,
            batch_size: 1,
            horizon: DEFAULT_HORIZON,
            seeds: default_seeds(),
            master_seed: 0,
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::Config(msg));
        if self.rates.is_empty() {
            return fail("risk curve needs at least one rate".into());
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return fail(format!("rates must be probabilities, got {r}"));
        }
        if self.rates.windows(2).any(|w| w[1] <= w[0]) {
            return fail("rates must be strictly increasing".into());
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return fail(format!("threshold must be a non-negative amount, got {}", self.threshold));
        }
        if self.batch_size == 0 || self.horizon == 0 || self.seeds == 0 {
            return fail("batch_size, horizon and seeds must be at least 1".into());
        }
        Ok(())
    }
}

/// Analytic, monitor-estimated and realized risk at one rate, averaged over
/// seeds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveValues {
    pub analytic: f64,
    pub estimated: f64,
    pub realized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub rate: f64,
    pub no_rv: CurveValues,
    pub rv: CurveValues,
}

/// First rate at which each curve of one configuration exceeds the
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub topology: Topology,
    pub analytic: Option<f64>,
    pub estimated: Option<f64>,
    pub realized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub schema_version: u32,
    pub threshold: f64,
    pub points: Vec<RiskPoint>,
    pub crossings: Vec<Crossing>,
}

impl RiskCurve {
    pub fn crossing(&self, topology: Topology) -> Option<&Crossing> {
        self.crossings.iter().find(|c| c.topology == topology)
    }
}

/// First point where `values` exceeds `threshold`, located by linear
/// interpolation between that grid point and the one before it.
pub fn crossing_rate(rates: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    let i = values.iter().position(|v| *v > threshold)?;
    if i == 0 {
        return Some(rates[0]);
    }
    let (r0, r1) = (rates[i - 1], rates[i]);
    let (v0, v1) = (values[i - 1], values[i]);
    Some(r0 + (threshold - v0) / (v1 - v0) * (r1 - r0))
}

fn tree(
    topology: Topology,
    rate: f64,
    profile: DetectorProfile,
    calibration: &BatchCalibration,
) -> Result<EventTree, ExperimentError> {
    let params = TreeParams {
        p_event: rate,
        profile,
        accuracies: tree_accuracies(topology, calibration.p_ind, calibration.p_ood),
    };
    Ok(EventTree::build(topology, &params, InterventionPolicy::default())?)
}

#[derive(Default, Clone, Copy)]
struct RunValues {
    estimated: f64,
    realized: f64,
}

fn risk_run(
    spec: &RiskCurveSpec,
    oracle: &AccuracyOracle,
    costs: &CostModel,
    calibration: &BatchCalibration,
    rate: f64,
    seed_index: usize,
) -> Result<[RunValues; 2], ExperimentError> {
    let seed = derive_seed(spec.master_seed, &[rate.to_bits(), seed_index as u64]);
    let stream_config = StreamConfig::new(
        spec.batch_size,
        rate,
        spec.horizon,
        derive_seed(seed, &[TAG_STREAM]),
    );
    let stream = StreamGenerator::new(stream_config, oracle.clone())?;
    let mut detector = SyntheticDetector::new(spec.profile, derive_seed(seed, &[TAG_DETECTOR]));
    let mut monitors = [Topology::Base, Topology::Rv]
        .into_iter()
        .map(|topology| {
            let config = MonitorConfig::new(
                topology,
                spec.profile,
                tree_accuracies(topology, calibration.p_ind, calibration.p_ood),
            )
            .with_costs(costs.clone())
            .with_capacity(spec.horizon);
            Monitor::new(config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut realized = [0.0; 2];
    for batch in stream {
        let truth = batch.truth();
        let is_ood = truth.is_ood()?;
        let verdict = detector.judge_batch(truth)?;
        let correct = batch_correct(&batch, calibration.threshold);
        for (i, monitor) in monitors.iter_mut().enumerate() {
            monitor.ingest(verdict);
            let outcome = Outcome::realized(monitor.config().topology, is_ood, verdict, correct);
            realized[i] += costs.cost_of(outcome)?;
        }
    }
    let mut out = [RunValues::default(); 2];
    for (i, monitor) in monitors.iter().enumerate() {
        out[i] = RunValues {
            estimated: monitor.assess()?.expected_risk.ok_or(ExperimentError::Config(
                "monitor produced no risk".into(),
            ))?,
            realized: realized[i] / spec.horizon as f64,
        };
    }
    Ok(out)
}

/// Risk curves for the base (no-rv) and rv configurations.
///
/// Each seed runs one stream through a monitor whose trace spans the whole
/// stream, so the estimate at the end uses every verdict. Realized risk is
/// the mean cost of the leaves the batches actually landed in.
pub fn risk_curve(
    spec: &RiskCurveSpec,
    oracle: &AccuracyOracle,
    costs: &CostModel,
) -> Result<RiskCurve, ExperimentError> {
    spec.validate()?;
    let calibration = BatchCalibration::new(
        oracle,
        spec.batch_size,
        DEFAULT_PERCENTILE,
        DEFAULT_VALIDATION_BATCHES,
        derive_seed(spec.master_seed, &[TAG_CALIBRATION, spec.batch_size as u64]),
    )?;
    let jobs: Vec<(usize, f64, usize)> = spec
        .rates
        .iter()
        .enumerate()
        .flat_map(|(i, r)| (0..spec.seeds).map(move |s| (i, *r, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|(_, rate, s)| risk_run(spec, oracle, costs, &calibration, *rate, *s))
        .collect::<Result<Vec<_>, _>>()?;

    let mut points = Vec::with_capacity(spec.rates.len());
    for (i, &rate) in spec.rates.iter().enumerate() {
        let mut values = [CurveValues::default(); 2];
        for (topology_index, topology) in [Topology::Base, Topology::Rv].into_iter().enumerate() {
            values[topology_index].analytic =
                tree(topology, rate, spec.profile, &calibration)?.expected_risk(costs)?;
        }
        for ((job_rate_index, _, _), run) in jobs.iter().zip(&runs) {
            if *job_rate_index != i {
                continue;
            }
            for t in 0..2 {
                values[t].estimated += run[t].estimated / spec.seeds as f64;
                values[t].realized += run[t].realized / spec.seeds as f64;
            }
        }
        points.push(RiskPoint {
            rate,
            no_rv: values[0],
            rv: values[1],
        });
    }

    let curve = |pick: fn(&RiskPoint) -> CurveValues, field: fn(&CurveValues) -> f64| {
        let values: Vec<f64> = points.iter().map(|p| field(&pick(p))).collect();
        crossing_rate(&spec.rates, &values, spec.threshold)
    };
    let crossings = vec![
        Crossing {
            topology: Topology::Base,
            analytic: curve(|p| p.no_rv, |v| v.analytic),
            estimated: curve(|p| p.no_rv, |v| v.estimated),
            realized: curve(|p| p.no_rv, |v| v.realized),
        },
        Crossing {
            topology: Topology::Rv,
            analytic: curve(|p| p.rv, |v| v.analytic),
            estimated: curve(|p| p.rv, |v| v.estimated),
            realized: curve(|p| p.rv, |v| v.realized),
        },
    ];
    Ok(RiskCurve {
        schema_version: REPORT_SCHEMA_VERSION,
        threshold: spec.threshold,
        points,
        crossings,
    })
}

/// Rate at which an affine-in-rate tree risk reaches `threshold`, if it
/// does within [0, 1].
pub fn analytic_crossing(
    risk_at: impl Fn(f64) -> Result<f64, ExperimentError>,
    threshold: f64,
) -> Result<Option<f64>, ExperimentError> {
    let r0 = risk_at(0.0)?;
    let r1 = risk_at(1.0)?;
    if r0 > threshold {
        return Ok(Some(0.0));
    }
    if r1 <= threshold || r1 == r0 {
        return Ok(None);
    }
    Ok(Some((threshold - r0) / (r1 - r0)))
}

fn default_classifier_axis() -> Vec<f64> {
    (0..=4).map(|i| 0.8 + i as f64 * 0.05).collect()
}

fn default_detector_axis() -> Vec<f64> {
    (0..=10).map(|i| 0.5 + i as f64 * 0.05).collect()
}

fn default_step() -> f64 {
    0.05
}

/// Cost-benefit surface over in-distribution classifier accuracy and
/// detector balanced accuracy, for the rv configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbaSpec {
    #[serde(default = "default_classifier_axis")]
    pub classifier_axis: Vec<f64>,
    #[serde(default = "default_detector_axis")]
    pub detector_axis: Vec<f64>,
    /// Detector at the operating point; its tpr/tnr imbalance is kept
    /// along the detector axis.
    #[serde(default = "default_profile")]
    pub profile: DetectorProfile,
    /// Shift rate of the surface. Defaults to the rate at which the
    /// operating point's analytic rv risk reaches the threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    pub threshold: f64,
    /// Improvement step for the finite comparison at the operating point.
    #[serde(default = "default_step")]
    pub step: f64,
}

impl CbaSpec {
    pub fn new(threshold: f64) -> Self {
        Self {
            classifier_axis: default_classifier_axis(),
            detector_axis: default_detector_axis(),
            profile: default_profile(),
            rate: None,
            threshold,
            step: default_step(),
        }
    }
}

/// A detector with balanced accuracy `ba` and tpr/tnr split `skew` around
/// it. When one rate saturates at 1 the other absorbs the remainder.
/// Returns the profile and the derivatives of tpr and tnr with respect to
/// `ba`.
pub fn profile_at(ba: f64, skew: f64) -> Result<(DetectorProfile, f64, f64), ExperimentError> {
    let (tpr, tnr, d_tpr, d_tnr) = if ba + skew > 1.0 {
        (1.0, 2.0 * ba - 1.0, 0.0, 2.0)
    } else if ba - skew > 1.0 {
        (2.0 * ba - 1.0, 1.0, 2.0, 0.0)
    } else {
        (ba + skew, ba - skew, 1.0, 1.0)
    };
    let profile = DetectorProfile::new(tpr, tnr).map_err(|_| {
        ExperimentError::Config(format!(
            "balanced accuracy {ba} with tpr/tnr skew {skew} gives tpr {tpr}, tnr {tnr}"
        ))
    })?;
    Ok((profile, d_tpr, d_tnr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbaPoint {
    pub classifier: f64,
    pub detector: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub risk: f64,
    /// Risk reduction per unit of classifier accuracy.
    pub classifier_marginal: f64,
    /// Risk reduction per unit of detector balanced accuracy.
    pub detector_marginal: f64,
}

/// Finite-step comparison at the operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingComparison {
    pub classifier: f64,
    pub detector: f64,
    pub rate: f64,
    pub risk: f64,
    pub step: f64,
    pub classifier_step_reduction: f64,
    pub detector_step_reduction: f64,
    pub classifier_marginal: f64,
    pub detector_marginal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbaSurface {
    pub schema_version: u32,
    pub rate: f64,
    pub classifier_axis: Vec<f64>,
    pub detector_axis: Vec<f64>,
    /// Row-major: classifier outer, detector inner.
    pub points: Vec<CbaPoint>,
    pub operating_point: OperatingComparison,
}

/// Risk model behind the surface: the rv tree with the OOD accuracy moving
/// in lockstep with the in-distribution accuracy.
#[derive(Debug, Clone)]
pub struct CbaModel {
    pub acc_ind: f64,
    pub acc_ood: f64,
    pub skew: f64,
    pub rate: f64,
    pub costs: CostModel,
}

impl CbaModel {
    fn ood_accuracy(&self, classifier: f64) -> (f64, f64) {
        let shifted = self.acc_ood + (classifier - self.acc_ind);
        let slope = if shifted > 0.0 && shifted < 1.0 { 1.0 } else { 0.0 };
        (shifted.clamp(0.0, 1.0), slope)
    }

    pub fn tree(&self, classifier: f64, detector: f64) -> Result<EventTree, ExperimentError> {
        if !(0.0..=1.0).contains(&classifier) {
            return Err(ExperimentError::Config(format!(
                "classifier accuracy must be a probability, got {classifier}"
            )));
        }
        let (profile, _, _) = profile_at(detector, self.skew)?;
        let params = TreeParams::new(self.rate, profile)
            .with_accuracy(Condition::IND_NEG, classifier)
            .with_accuracy(Condition::OOD_NEG, self.ood_accuracy(classifier).0);
        Ok(EventTree::build(Topology::Rv, &params, InterventionPolicy::default())?)
    }

    pub fn risk(&self, classifier: f64, detector: f64) -> Result<f64, ExperimentError> {
        Ok(self.tree(classifier, detector)?.expected_risk(&self.costs)?)
    }

    /// Risk reductions per unit improvement of each axis, from the tree's
    /// exact partial derivatives.
    pub fn marginals(&self, classifier: f64, detector: f64) -> Result<(f64, f64), ExperimentError> {
        let tree = self.tree(classifier, detector)?;
        let (_, d_tpr, d_tnr) = profile_at(detector, self.skew)?;
        let costs = Some(&self.costs);
        let d_detector = tree.sensitivity(Param::Tpr, costs)? * d_tpr
            + tree.sensitivity(Param::Tnr, costs)? * d_tnr;
        let (_, ood_slope) = self.ood_accuracy(classifier);
        let d_classifier = tree.sensitivity(Param::Accuracy(Condition::IND_NEG), costs)?
            + tree.sensitivity(Param::Accuracy(Condition::OOD_NEG), costs)? * ood_slope;
        Ok((-d_classifier, -d_detector))
    }
}

pub fn cba_surface(
    spec: &CbaSpec,
    oracle: &AccuracyOracle,
    costs: &CostModel,
) -> Result<CbaSurface, ExperimentError> {
    if spec.classifier_axis.is_empty() || spec.detector_axis.is_empty() {
        return Err(ExperimentError::Config("cba axes must not be empty".into()));
    }
    if !(spec.step > 0.0) {
        return Err(ExperimentError::Config(format!("step must be positive, got {}", spec.step)));
    }
    let skew = (spec.profile.tpr() - spec.profile.tnr()) / 2.0;
    let classifier0 = oracle.ind();
    let detector0 = spec.profile.balanced_accuracy();
    let mut model = CbaModel {
        acc_ind: classifier0,
        acc_ood: oracle.ood(),
        skew,
        rate: 0.0,
        costs: costs.clone(),
    };
    model.rate = match spec.rate {
        Some(rate) => rate,
        None => {
            let at = |rate: f64| {
                let m = CbaModel { rate, ..model.clone() };
                m.risk(classifier0, detector0)
            };
            analytic_crossing(at, spec.threshold)?.ok_or_else(|| {
                ExperimentError::Config(
                    "operating-point risk never reaches the threshold; set the rate explicitly"
                        .into(),
                )
            })?
        }
    };
    if !(0.0..=1.0).contains(&model.rate) {
        return Err(ExperimentError::Config(format!(
            "rate must be a probability, got {}",
            model.rate
        )));
    }
    let mut points = Vec::with_capacity(spec.classifier_axis.len() * spec.detector_axis.len());
    for &classifier in &spec.classifier_axis {
        for &detector in &spec.detector_axis {
            let (profile, _, _) = profile_at(detector, skew)?;
            let (classifier_marginal, detector_marginal) = model.marginals(classifier, detector)?;
            points.push(CbaPoint {
                classifier,
                detector,
                tpr: profile.tpr(),
                tnr: profile.tnr(),
                risk: model.risk(classifier, detector)?,
                classifier_marginal,
                detector_marginal,
            });
        }
    }
    let risk = model.risk(classifier0, detector0)?;
    let (classifier_marginal, detector_marginal) = model.marginals(classifier0, detector0)?;
    let operating_point = OperatingComparison {
        classifier: classifier0,
        detector: detector0,
        rate: model.rate,
        risk,
        step: spec.step,
        classifier_step_reduction: risk - model.risk((classifier0 + spec.step).min(1.0), detector0)?,
        detector_step_reduction: risk - model.risk(classifier0, (detector0 + spec.step).min(1.0))?,
        classifier_marginal,
        detector_marginal,
    };
    Ok(CbaSurface {
        schema_version: REPORT_SCHEMA_VERSION,
        rate: model.rate,
        classifier_axis: spec.classifier_axis.clone(),
        detector_axis: spec.detector_axis.clone(),
        points,
        operating_point,
    })
}
