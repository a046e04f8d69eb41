//! Verdict sources: synthetic detectors with a fixed error profile, the
//! tpr/tnr grid used in sweeps, and a threshold rule over recorded scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::DetectorProfile;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch holds {ood_samples} OOD samples but only {size} samples in total")]
    InconsistentBatch { ood_samples: usize, size: usize },
    #[error("score must be finite, got {0}")]
    NonFiniteScore(f64),
    #[error("grid step must lie in (0, 1], got {0}")]
    InvalidStep(f64),
    #[error("recorded verdict source is exhausted after {0} verdicts")]
    Exhausted(usize),
}

/// Ground truth of one batch as seen by a detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchTruth {
    /// Every sample shares one event state.
    Uniform { is_ood: bool, size: usize },
    /// `ood_samples` of `size` samples are shifted.
    Mixture { ood_samples: usize, size: usize },
}

impl BatchTruth {
    pub fn size(&self) -> usize {
        match *self {
            BatchTruth::Uniform { size, .. } | BatchTruth::Mixture { size, .. } => size,
        }
    }

    /// Event state the detector is judged against. Mixed batches count as
    /// shifted when at least half their samples are.
    pub fn is_ood(&self) -> Result<bool, DetectorError> {
        match *self {
            BatchTruth::Uniform { size: 0, .. } | BatchTruth::Mixture { size: 0, .. } => {
                Err(DetectorError::EmptyBatch)
            }
            BatchTruth::Uniform { is_ood, .. } => Ok(is_ood),
            BatchTruth::Mixture { ood_samples, size } if ood_samples > size => {
                Err(DetectorError::InconsistentBatch { ood_samples, size })
            }
            BatchTruth::Mixture { ood_samples, size } => Ok(2 * ood_samples >= size),
        }
    }
}

/// Anything that emits one verdict per batch.
pub trait BatchJudge {
    fn judge_batch(&mut self, truth: BatchTruth) -> Result<bool, DetectorError>;
}

/// A detector that is right with probability tpr on shifted inputs and tnr
/// on in-distribution inputs, independently per call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDetector {
    profile: DetectorProfile,
    rng: ChaCha8Rng,
}

impl SyntheticDetector {
    pub fn new(profile: DetectorProfile, seed: u64) -> Self {
        Self {
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn profile(&self) -> &DetectorProfile {
        &self.profile
    }

    /// One verdict; `true` means a shift was flagged.
    pub fn judge(&mut self, is_ood: bool) -> bool {
        let u: f64 = self.rng.random();
        if is_ood {
            u < self.profile.tpr()
        } else {
            u >= self.profile.tnr()
        }
    }
}

impl BatchJudge for SyntheticDetector {
    fn judge_batch(&mut self, truth: BatchTruth) -> Result<bool, DetectorError> {
        Ok(self.judge(truth.is_ood()?))
    }
}

/// Replays a fixed verdict sequence, ignoring ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedVerdicts {
    verdicts: Vec<bool>,
    position: usize,
}

impl RecordedVerdicts {
    pub fn new(verdicts: Vec<bool>) -> Self {
        Self {
            verdicts,
            position: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.verdicts.len() - self.position
    }
}

impl BatchJudge for RecordedVerdicts {
    fn judge_batch(&mut self, truth: BatchTruth) -> Result<bool, DetectorError> {
        truth.is_ood()?;
        let verdict = *self
            .verdicts
            .get(self.position)
            .ok_or(DetectorError::Exhausted(self.verdicts.len()))?;
        self.position += 1;
        Ok(verdict)
    }
}

/// Rounding applied to lattice points so that `k * step` lands on the
/// intended decimal.
const LATTICE_ROUNDING: f64 = 1e-12;

/// Tolerance on the balanced-accuracy floor, so lattice pairs that sit on
/// the floor up to rounding are excluded.
const FLOOR_TOLERANCE: f64 = 1e-12;

fn lattice(step: f64) -> Vec<f64> {
    let n = (1.0 / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|k| ((k as f64 * step) / LATTICE_ROUNDING).round() * LATTICE_ROUNDING)
        .filter(|v| *v <= 1.0)
        .collect()
}

/// Every `(tpr, tnr)` pair on a lattice of spacing `step` whose balanced
/// accuracy exceeds `ba_floor`, ordered by tpr and then tnr.
pub fn detector_grid(step: f64, ba_floor: f64) -> Result<Vec<DetectorProfile>, DetectorError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(DetectorError::InvalidStep(step));
    }
    let values = lattice(step);
    let mut out = Vec::new();
    for &tpr in &values {
        for &tnr in &values {
            if (tpr + tnr) / 2.0 - ba_floor > FLOOR_TOLERANCE {
                out.push(DetectorProfile::new(tpr, tnr).expect("lattice values are probabilities"));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDirection {
    /// Scores above the threshold flag a shift.
    #[default]
    GreaterIsOod,
    /// Scores below the threshold flag a shift.
    LessIsOod,
}

/// Turns a scalar detector score into a verdict. Scores equal to the
/// threshold are never flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDetector {
    pub threshold: f64,
    #[serde(default)]
    pub direction: ScoreDirection,
}

impl ThresholdDetector {
    pub fn new(threshold: f64, direction: ScoreDirection) -> Self {
        Self {
            threshold,
            direction,
        }
    }

    pub fn judge_score(&self, score: f64) -> Result<bool, DetectorError> {
        if !score.is_finite() {
            return Err(DetectorError::NonFiniteScore(score));
        }
        Ok(match self.direction {
            ScoreDirection::GreaterIsOod => score > self.threshold,
            ScoreDirection::LessIsOod => score < self.threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::calibrate_profile;
    use rand_distr::{Distribution, Normal};
    use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

    fn profile(tpr: f64, tnr: f64) -> DetectorProfile {
        DetectorProfile::new(tpr, tnr).unwrap()
    }

    #[test]
    fn perfect_detector_echoes_truth() {
        let mut d = SyntheticDetector::new(DetectorProfile::perfect(), 3);
        for i in 0..1000 {
            let is_ood = i % 3 == 0;
            assert_eq!(d.judge(is_ood), is_ood);
        }
    }

    #[test]
    fn empirical_rates_match_profile() {
        let mut d = SyntheticDetector::new(profile(0.8, 0.6), 11);
        let n = 100_000;
        let flagged = (0..n).filter(|_| d.judge(true)).count() as f64 / n as f64;
        let passed = (0..n).filter(|_| !d.judge(false)).count() as f64 / n as f64;
        assert!((flagged - 0.8).abs() < 0.01, "{flagged}");
        assert!((passed - 0.6).abs() < 0.01, "{passed}");
    }

    #[test]
    fn same_seed_same_verdicts() {
        let truth: Vec<bool> = (0..500).map(|i| i % 7 < 3).collect();
        let run = |seed| {
            let mut d = SyntheticDetector::new(profile(0.7, 0.65), seed);
            truth.iter().map(|t| d.judge(*t)).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn serialized_detector_resumes_stream() {
        let mut d = SyntheticDetector::new(profile(0.7, 0.65), 9);
        for _ in 0..37 {
            d.judge(true);
        }
        let json = serde_json::to_string(&d).unwrap();
        let mut restored: SyntheticDetector = serde_json::from_str(&json).unwrap();
        let a: Vec<bool> = (0..100).map(|_| d.judge(false)).collect();
        let b: Vec<bool> = (0..100).map(|_| restored.judge(false)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_judging() {
        let mut d = SyntheticDetector::new(DetectorProfile::perfect(), 0);
        assert!(d.judge_batch(BatchTruth::Uniform { is_ood: true, size: 8 }).unwrap());
        assert!(!d.judge_batch(BatchTruth::Mixture { ood_samples: 0, size: 8 }).unwrap());
        assert!(d.judge_batch(BatchTruth::Mixture { ood_samples: 7, size: 10 }).unwrap());
        assert!(d.judge_batch(BatchTruth::Mixture { ood_samples: 4, size: 8 }).unwrap());
        assert!(!d.judge_batch(BatchTruth::Mixture { ood_samples: 3, size: 8 }).unwrap());
        assert_eq!(
            d.judge_batch(BatchTruth::Uniform { is_ood: true, size: 0 }),
            Err(DetectorError::EmptyBatch)
        );
        assert_eq!(
            d.judge_batch(BatchTruth::Mixture { ood_samples: 0, size: 0 }),
            Err(DetectorError::EmptyBatch)
        );
    }

    #[test]
    fn recorded_verdicts_replay_in_order() {
        let mut r = RecordedVerdicts::new(vec![true, false]);
        let t = BatchTruth::Uniform { is_ood: false, size: 1 };
        assert!(r.judge_batch(t).unwrap());
        assert!(!r.judge_batch(t).unwrap());
        assert_eq!(r.judge_batch(t), Err(DetectorError::Exhausted(2)));
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(detector_grid(0.1, 0.5).unwrap().len(), 55);
        assert!(detector_grid(0.1, 1.0).unwrap().is_empty());
        let coarse: Vec<(f64, f64)> = detector_grid(0.5, 0.5)
            .unwrap()
            .iter()
            .map(|p| (p.tpr(), p.tnr()))
            .collect();
        assert_eq!(coarse, vec![(0.5, 1.0), (1.0, 0.5), (1.0, 1.0)]);
        assert!(detector_grid(0.0, 0.5).is_err());
        assert!(detector_grid(1.5, 0.5).is_err());
    }

    #[test]
    fn grid_matches_integer_enumeration() {
        // count lattice pairs i + j > 10 on the 11 x 11 integer lattice
        let expected = (0..=10)
            .flat_map(|i| (0..=10).map(move |j| (i, j)))
            .filter(|(i, j)| i + j > 10)
            .count();
        assert_eq!(detector_grid(0.1, 0.5).unwrap().len(), expected);
    }

    #[test]
    fn grid_is_symmetric() {
        let grid = detector_grid(0.1, 0.5).unwrap();
        for p in &grid {
            assert!(grid.iter().any(|q| q.tpr() == p.tnr() && q.tnr() == p.tpr()));
        }
    }

    #[test]
    fn threshold_rule() {
        let d = ThresholdDetector::new(0.0, ScoreDirection::GreaterIsOod);
        assert!(d.judge_score(1.0).unwrap());
        assert!(!d.judge_score(0.0).unwrap());
        assert!(!d.judge_score(-1.0).unwrap());
        let d = ThresholdDetector::new(0.0, ScoreDirection::LessIsOod);
        assert!(d.judge_score(-1.0).unwrap());
        assert!(!d.judge_score(0.0).unwrap());
        assert!(d.judge_score(f64::NAN).is_err());
        assert!(d.judge_score(f64::INFINITY).is_err());
    }

    #[test]
    fn threshold_calibration_recovers_implied_rates() {
        // InD scores ~ N(0, 1), OOD scores ~ N(2, 1), threshold 1
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ind = Normal::new(0.0, 1.0).unwrap();
        let ood = Normal::new(2.0, 1.0).unwrap();
        let d = ThresholdDetector::new(1.0, ScoreDirection::GreaterIsOod);
        let n = 10_000;
        let mut labeled = Vec::with_capacity(2 * n);
        for _ in 0..n {
            labeled.push((d.judge_score(ind.sample(&mut rng)).unwrap(), false));
            labeled.push((d.judge_score(ood.sample(&mut rng)).unwrap(), true));
        }
        let fitted = calibrate_profile(labeled).unwrap();
        let std = NormalDist::new(0.0, 1.0).unwrap();
        let tpr = 1.0 - std.cdf(1.0 - 2.0);
        let tnr = std.cdf(1.0);
        assert!((fitted.tpr() - tpr).abs() < 0.02);
        assert!((fitted.tnr() - tnr).abs() < 0.02);
    }
}
