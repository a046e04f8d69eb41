//! Error metrics, the constant baseline, and seed derivation.

use serde::{Deserialize, Serialize};

use super::ExperimentError;

fn check_lengths(truth: &[f64], estimate: &[f64]) -> Result<(), ExperimentError> {
    if truth.len() != estimate.len() {
        return Err(ExperimentError::LengthMismatch {
            truth: truth.len(),
            estimate: estimate.len(),
        });
    }
    if truth.is_empty() {
        return Err(ExperimentError::Empty);
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(truth: &[f64], estimate: &[f64]) -> Result<f64, ExperimentError> {
    check_lengths(truth, estimate)?;
    let total: f64 = truth.iter().zip(estimate).map(|(y, e)| (y - e).abs()).sum();
    Ok(total / truth.len() as f64)
}

/// Mean of `estimate - truth`.
pub fn mean_signed_error(truth: &[f64], estimate: &[f64]) -> Result<f64, ExperimentError> {
    check_lengths(truth, estimate)?;
    let total: f64 = truth.iter().zip(estimate).map(|(y, e)| e - y).sum();
    Ok(total / truth.len() as f64)
}

/// Estimator that always reports the in-distribution validation accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimator {
    pub ind_val_accuracy: f64,
}

impl BaselineEstimator {
    pub fn new(ind_val_accuracy: f64) -> Self {
        Self { ind_val_accuracy }
    }

    pub fn estimate(&self) -> f64 {
        self.ind_val_accuracy
    }
}

/// Running error sums. Merging is plain addition, so cells can be combined
/// in any grouping.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: u64,
    pub sum_abs: f64,
    pub sum_signed: f64,
}

impl ErrorStats {
    pub fn push(&mut self, truth: f64, estimate: f64) {
        let err = estimate - truth;
        self.n += 1;
        self.sum_abs += err.abs();
        self.sum_signed += err;
    }

    pub fn merge(&mut self, other: &ErrorStats) {
        self.n += other.n;
        self.sum_abs += other.sum_abs;
        self.sum_signed += other.sum_signed;
    }

    pub fn mae(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum_abs / self.n as f64)
    }

    pub fn mean_signed(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum_signed / self.n as f64)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a sub-experiment, derived from the master seed and a path of
/// coordinates.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, x| splitmix64(acc ^ splitmix64(*x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.1, 0.5], &[0.1, 0.5]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 0.5);
        let m = mae(&[0.2, 0.4, 0.9], &[0.1, 0.5, 0.6]).unwrap();
        assert!((m - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mae_errors() {
        assert!(matches!(
            mae(&[1.0], &[1.0, 2.0]),
            Err(ExperimentError::LengthMismatch { truth: 1, estimate: 2 })
        ));
        assert!(matches!(mae(&[], &[]), Err(ExperimentError::Empty)));
        assert!(mean_signed_error(&[], &[]).is_err());
    }

    #[test]
    fn signed_error_bounded_by_mae() {
        let t = [0.2, 0.4, 0.9, 0.3];
        let e = [0.1, 0.5, 0.6, 0.35];
        assert!(mean_signed_error(&t, &e).unwrap().abs() <= mae(&t, &e).unwrap());
    }

    #[test]
    fn baseline_error_is_rate_times_gap() {
        let base = BaselineEstimator::new(0.90);
        let r = 0.5;
        let truth = (1.0 - r) * 0.90 + r * 0.33;
        assert!(((base.estimate() - truth).abs() - 0.285).abs() < 1e-12);
    }

    #[test]
    fn stats_match_slice_metrics() {
        let t = [0.2, 0.4, 0.9];
        let e = [0.1, 0.5, 0.6];
        let mut s = ErrorStats::default();
        for (y, x) in t.iter().zip(&e) {
            s.push(*y, *x);
        }
        assert!((s.mae().unwrap() - mae(&t, &e).unwrap()).abs() < 1e-15);
        assert!((s.mean_signed().unwrap() - mean_signed_error(&t, &e).unwrap()).abs() < 1e-15);
        assert_eq!(ErrorStats::default().mae(), None);
    }

    #[test]
    fn derived_seeds_differ_by_path() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }
}
