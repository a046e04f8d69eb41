//! Parameters of the colonoscopy polyp-segmentation case study.

use crate::event_tree::{CostModel, OutcomeKind};

/// In-distribution validation accuracy of the segmentation model.
pub const POLYP_IND_ACCURACY: f64 = 0.90;

/// Out-of-distribution folds and their accuracies.
pub const POLYP_OOD_FOLDS: [(&str, f64); 3] =
    [("cvc_clinicdb", 0.71), ("endocv2020", 0.74), ("etis_laribpolypdb", 0.33)];

/// Maximum tolerable expected cost per patient.
pub const POLYP_RISK_THRESHOLD: f64 = 1925.0;

/// Per-patient cost of each outcome.
pub fn polyp_costs() -> CostModel {
    CostModel::new([
        (OutcomeKind::Correct, 635.0),
        (OutcomeKind::NecessaryIntervention, 1905.0),
        (OutcomeKind::UnnecessaryIntervention, 1955.0),
        (OutcomeKind::Failed, 6735.0),
    ])
    .expect("preset costs are valid")
}

/// Uniformly weighted mean accuracy over the OOD folds.
pub fn polyp_ood_accuracy() -> f64 {
    POLYP_OOD_FOLDS.iter().map(|(_, a)| a).sum::<f64>() / POLYP_OOD_FOLDS.len() as f64
}
