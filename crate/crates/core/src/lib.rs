//! Label-free accuracy and risk estimation for deployed models under
//! distributional shift.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detectors;
pub mod estimation;
pub mod experiments;
pub mod event_tree;
pub mod monitor;
pub mod presets;
pub mod simulation;

pub use estimation::{DetectorProfile, EstimationError, RateEstimate, VerdictTrace};
pub use event_tree::{
    Accuracy, Condition, CostModel, EventTree, InterventionPolicy, Outcome, OutcomeKind, Param,
    Topology, TreeError, TreeParams,
};
