//! Probability-weighted outcome trees.
//!
//! Two topologies are supported. The base tree branches on whether an input
//! is in- or out-of-distribution, then on whether the monitored model is
//! correct. The runtime-verification ("rv") tree inserts a detector-verdict
//! level between the two: positive verdicts end in a human intervention,
//! negative verdicts fall through to the model.
//!
//! Every expected value of the tree is multilinear in the parameters, so
//! partial derivatives are computed exactly from two re-traversals with the
//! parameter pinned at 0 and 1.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::estimation::DetectorProfile;

/// Tolerance for probability-sum checks.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("{name} must be a probability in [0, 1], got {value}")]
    Domain { name: String, value: f64 },
    #[error("no conditional accuracy for reachable condition {0}")]
    MissingAccuracy(Condition),
    #[error("every condition under the {0} branch is data-free")]
    NoData(Condition),
    #[error("parameter {param} is not used by the {topology} tree")]
    UnknownParameter { param: Param, topology: Topology },
    #[error("no cost configured for reachable outcome {0}")]
    Unpriced(Outcome),
    #[error("cost for {kind} must be a non-negative finite amount, got {value}")]
    InvalidCost { kind: OutcomeKind, value: f64 },
    #[error("no negative-verdict mass left to assess accuracy over")]
    NoAssessableMass,
    #[error("malformed tree: {0}")]
    Invalid(String),
}

fn check_probability(name: impl Into<String>, value: f64) -> Result<f64, TreeError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(TreeError::Domain {
            name: name.into(),
            value,
        })
    }
}

/// A partition of the input space: the event state, optionally refined by
/// the detector verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Condition {
    pub is_ood: bool,
    pub verdict: Option<bool>,
}

impl Condition {
    pub const IND: Condition = Condition::event(false);
    pub const OOD: Condition = Condition::event(true);
    pub const IND_NEG: Condition = Condition::with_verdict(false, false);
    pub const IND_POS: Condition = Condition::with_verdict(false, true);
    pub const OOD_POS: Condition = Condition::with_verdict(true, true);
    pub const OOD_NEG: Condition = Condition::with_verdict(true, false);

    pub const ALL: [Condition; 6] = [
        Condition::IND,
        Condition::OOD,
        Condition::IND_NEG,
        Condition::IND_POS,
        Condition::OOD_POS,
        Condition::OOD_NEG,
    ];

    /// The four leaf conditions of the rv topology.
    pub const RV: [Condition; 4] = [
        Condition::IND_NEG,
        Condition::IND_POS,
        Condition::OOD_POS,
        Condition::OOD_NEG,
    ];

    pub const fn event(is_ood: bool) -> Self {
        Condition {
            is_ood,
            verdict: None,
        }
    }

    pub const fn with_verdict(is_ood: bool, verdict: bool) -> Self {
        Condition {
            is_ood,
            verdict: Some(verdict),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_ood { "ood" } else { "ind" })?;
        match self.verdict {
            Some(true) => f.write_str("/pos"),
            Some(false) => f.write_str("/neg"),
            None => Ok(()),
        }
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (event, verdict) = match s.split_once('/') {
            Some((e, v)) => (e, Some(v)),
            None => (s, None),
        };
        let is_ood = match event {
            "ind" => false,
            "ood" => true,
            other => return Err(format!("unknown event '{other}' in condition '{s}'")),
        };
        let verdict = match verdict {
            None => None,
            Some("pos") => Some(true),
            Some("neg") => Some(false),
            Some(other) => return Err(format!("unknown verdict '{other}' in condition '{s}'")),
        };
        Ok(Condition { is_ood, verdict })
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What happened at a leaf, used to look up its cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// The model handled the input correctly.
    Correct,
    /// The model erred and nothing caught it.
    Failed,
    /// A positive verdict sent a shifted input to a human.
    NecessaryIntervention,
    /// A positive verdict sent an in-distribution input to a human.
    UnnecessaryIntervention,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 4] = [
        OutcomeKind::Correct,
        OutcomeKind::Failed,
        OutcomeKind::NecessaryIntervention,
        OutcomeKind::UnnecessaryIntervention,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeKind::Correct => "correct",
            OutcomeKind::Failed => "failed",
            OutcomeKind::NecessaryIntervention => "necessary_intervention",
            OutcomeKind::UnnecessaryIntervention => "unnecessary_intervention",
        }
    }

    pub fn is_intervention(&self) -> bool {
        matches!(
            self,
            OutcomeKind::NecessaryIntervention | OutcomeKind::UnnecessaryIntervention
        )
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identity of a leaf: the condition it sits under and its outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Outcome {
    pub condition: Condition,
    pub kind: OutcomeKind,
}

impl Outcome {
    /// The leaf a single realized input lands in.
    pub fn realized(topology: Topology, is_ood: bool, verdict: bool, correct: bool) -> Outcome {
        let model_outcome = if correct {
            OutcomeKind::Correct
        } else {
            OutcomeKind::Failed
        };
        match topology {
            Topology::Base => Outcome {
                condition: Condition::event(is_ood),
                kind: model_outcome,
            },
            Topology::Rv => {
                let kind = match (verdict, is_ood) {
                    (true, true) => OutcomeKind::NecessaryIntervention,
                    (true, false) => OutcomeKind::UnnecessaryIntervention,
                    (false, _) => model_outcome,
                };
                Outcome {
                    condition: Condition::with_verdict(is_ood, verdict),
                    kind,
                }
            }
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.condition, self.kind)
    }
}

/// Per-outcome cost in currency units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<OutcomeKind, f64>", into = "BTreeMap<OutcomeKind, f64>")]
pub struct CostModel {
    costs: BTreeMap<OutcomeKind, f64>,
}

impl TryFrom<BTreeMap<OutcomeKind, f64>> for CostModel {
    type Error = TreeError;

    fn try_from(costs: BTreeMap<OutcomeKind, f64>) -> Result<Self, Self::Error> {
        for (&kind, &value) in &costs {
            if !(value.is_finite() && value >= 0.0) {
                return Err(TreeError::InvalidCost { kind, value });
            }
        }
        Ok(CostModel { costs })
    }
}

impl From<CostModel> for BTreeMap<OutcomeKind, f64> {
    fn from(model: CostModel) -> Self {
        model.costs
    }
}

impl CostModel {
    pub fn new(costs: impl IntoIterator<Item = (OutcomeKind, f64)>) -> Result<Self, TreeError> {
        Self::try_from(costs.into_iter().collect::<BTreeMap<_, _>>())
    }

    /// Every outcome priced at `cost`.
    pub fn uniform(cost: f64) -> Result<Self, TreeError> {
        Self::new(OutcomeKind::ALL.iter().map(|k| (*k, cost)))
    }

    pub fn get(&self, kind: OutcomeKind) -> Option<f64> {
        self.costs.get(&kind).copied()
    }

    pub fn cost_of(&self, outcome: Outcome) -> Result<f64, TreeError> {
        self.get(outcome.kind).ok_or(TreeError::Unpriced(outcome))
    }
}

/// A conditional accuracy entry: a known probability, or a partition that
/// had no calibration data and is therefore assumed never to occur.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Accuracy {
    Known(f64),
    DataFree,
}

impl Accuracy {
    pub fn value(&self) -> Option<f64> {
        match self {
            Accuracy::Known(a) => Some(*a),
            Accuracy::DataFree => None,
        }
    }
}

const DATA_FREE: &str = "data_free";

impl Serialize for Accuracy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Accuracy::Known(a) => serializer.serialize_f64(*a),
            Accuracy::DataFree => serializer.serialize_str(DATA_FREE),
        }
    }
}

impl<'de> Deserialize<'de> for Accuracy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Value(f64),
            Flag(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Value(a) if (0.0..=1.0).contains(&a) => Ok(Accuracy::Known(a)),
            Repr::Value(a) => Err(serde::de::Error::custom(format!(
                "accuracy must be a probability in [0, 1], got {a}"
            ))),
            Repr::Flag(s) if s == DATA_FREE => Ok(Accuracy::DataFree),
            Repr::Flag(s) => Err(serde::de::Error::custom(format!(
                "expected a probability or \"{DATA_FREE}\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Base,
    Rv,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Base => "base",
            Topology::Rv => "rv",
        })
    }
}

/// How intervention leaves count towards expected accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InterventionPolicy {
    /// A flagged input handled by a human is not a silent error.
    #[default]
    #[serde(rename = "correct")]
    CountsAsCorrect,
    /// Accuracy is renormalised over negative-verdict mass.
    #[serde(rename = "excluded")]
    Excluded,
}

/// Tree parameters. Topologies read only the fields they use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub p_event: f64,
    pub profile: DetectorProfile,
    pub accuracies: BTreeMap<Condition, Accuracy>,
}

impl TreeParams {
    pub fn new(p_event: f64, profile: DetectorProfile) -> Self {
        Self {
            p_event,
            profile,
            accuracies: BTreeMap::new(),
        }
    }

    /// Parameters for the base topology.
    pub fn base(p_event: f64, acc_ind: f64, acc_ood: f64) -> Self {
        Self::new(p_event, DetectorProfile::perfect())
            .with_accuracy(Condition::IND, acc_ind)
            .with_accuracy(Condition::OOD, acc_ood)
    }

    pub fn with_accuracy(mut self, condition: Condition, accuracy: f64) -> Self {
        self.accuracies.insert(condition, Accuracy::Known(accuracy));
        self
    }

    pub fn with_data_free(mut self, condition: Condition) -> Self {
        self.accuracies.insert(condition, Accuracy::DataFree);
        self
    }

    pub fn accuracy(&self, condition: Condition) -> Option<Accuracy> {
        self.accuracies.get(&condition).copied()
    }
}

/// A differentiable tree parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    PEvent,
    Tpr,
    Tnr,
    Accuracy(Condition),
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::PEvent => f.write_str("p_event"),
            Param::Tpr => f.write_str("tpr"),
            Param::Tnr => f.write_str("tnr"),
            Param::Accuracy(c) => write!(f, "acc:{c}"),
        }
    }
}

impl FromStr for Param {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p_event" => Ok(Param::PEvent),
            "tpr" => Ok(Param::Tpr),
            "tnr" => Ok(Param::Tnr),
            _ => match s.strip_prefix("acc:") {
                Some(c) => Ok(Param::Accuracy(c.parse()?)),
                None => Err(format!("unknown parameter '{s}'")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Branch {
        condition: Option<Condition>,
        children: Vec<Edge>,
    },
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub probability: f64,
    pub node: Node,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub outcome: Outcome,
    /// Probability that the leaf's outcome is a correct prediction;
    /// `None` on intervention leaves.
    pub correctness: Option<f64>,
}

impl Node {
    fn leaf(condition: Condition, kind: OutcomeKind, correctness: Option<f64>) -> Node {
        Node::Leaf(Leaf {
            outcome: Outcome { condition, kind },
            correctness,
        })
    }

    /// Correct/failed split under `condition`. Data-free partitions carry no
    /// mass, so their split is arbitrary.
    fn model_split(condition: Condition, accuracy: Accuracy) -> Node {
        let acc = accuracy.value().unwrap_or(0.0);
        Node::Branch {
            condition: Some(condition),
            children: vec![
                Edge {
                    probability: acc,
                    node: Node::leaf(condition, OutcomeKind::Correct, Some(1.0)),
                },
                Edge {
                    probability: 1.0 - acc,
                    node: Node::leaf(condition, OutcomeKind::Failed, Some(0.0)),
                },
            ],
        }
    }

    fn visit<F: FnMut(&Leaf, f64)>(&self, mass: f64, f: &mut F) {
        match self {
            Node::Leaf(leaf) => f(leaf, mass),
            Node::Branch { children, .. } => {
                for edge in children {
                    edge.node.visit(mass * edge.probability, f);
                }
            }
        }
    }

    fn validate(&self) -> Result<(), TreeError> {
        match self {
            Node::Leaf(leaf) => match leaf.correctness {
                Some(c) if !(0.0..=1.0).contains(&c) => Err(TreeError::Invalid(format!(
                    "leaf {} has correctness {c}",
                    leaf.outcome
                ))),
                _ => Ok(()),
            },
            Node::Branch { children, .. } => {
                if children.is_empty() {
                    return Err(TreeError::Invalid("branch without children".into()));
                }
                let mut total = 0.0;
                for edge in children {
                    if !(0.0..=1.0).contains(&edge.probability) {
                        return Err(TreeError::Invalid(format!(
                            "edge probability {} outside [0, 1]",
                            edge.probability
                        )));
                    }
                    total += edge.probability;
                    edge.node.validate()?;
                }
                if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
                    return Err(TreeError::Invalid(format!(
                        "outgoing probabilities sum to {total}"
                    )));
                }
                Ok(())
            }
        }
    }

    fn write_outline(&self, f: &mut fmt::Formatter<'_>, depth: usize, p: f64) -> fmt::Result {
        let indent = "  ".repeat(depth);
        match self {
            Node::Leaf(leaf) => writeln!(f, "{indent}- {} [{}]", leaf.outcome, Short(p)),
            Node::Branch {
                condition,
                children,
            } => {
                match condition {
                    Some(c) => writeln!(f, "{indent}- {c} [{}]", Short(p))?,
                    None => writeln!(f, "{indent}- root")?,
                }
                for edge in children {
                    edge.node.write_outline(f, depth + 1, edge.probability)?;
                }
                Ok(())
            }
        }
    }
}

/// An immutable, validated event tree.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTree {
    topology: Topology,
    policy: InterventionPolicy,
    /// Parameters with data-free partitions resolved, used for re-traversal.
    params: TreeParams,
    root: Node,
}

/// Builds the two-level tree: event, then model correctness.
pub fn build_base_tree(params: &TreeParams) -> Result<EventTree, TreeError> {
    EventTree::build(Topology::Base, params, InterventionPolicy::default())
}

/// Builds the three-level tree: event, detector verdict, then model
/// correctness on negative verdicts.
pub fn build_rv_tree(params: &TreeParams) -> Result<EventTree, TreeError> {
    EventTree::build(Topology::Rv, params, InterventionPolicy::default())
}

fn event_weight(p_event: f64, is_ood: bool) -> f64 {
    if is_ood {
        p_event
    } else {
        1.0 - p_event
    }
}

/// Declared data-free partitions get zero probability; the sibling branch
/// absorbs their mass.
fn forced_split(weights: [f64; 2], free: [bool; 2]) -> [f64; 2] {
    match free {
        [true, false] => [0.0, 1.0],
        [false, true] => [1.0, 0.0],
        _ => weights,
    }
}

impl EventTree {
    pub fn build(
        topology: Topology,
        params: &TreeParams,
        policy: InterventionPolicy,
    ) -> Result<Self, TreeError> {
        check_probability("p_event", params.p_event)?;
        for (condition, accuracy) in &params.accuracies {
            if let Accuracy::Known(a) = accuracy {
                check_probability(format!("accuracy of {condition}"), *a)?;
            }
        }
        let resolved = match topology {
            Topology::Base => resolve_base(params)?,
            Topology::Rv => resolve_rv(params)?,
        };
        let root = match topology {
            Topology::Base => base_root(&resolved)?,
            Topology::Rv => rv_root(&resolved)?,
        };
        root.validate()?;
        Ok(EventTree {
            topology,
            policy,
            params: resolved,
            root,
        })
    }

    pub fn with_policy(mut self, policy: InterventionPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn policy(&self) -> InterventionPolicy {
        self.policy
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Calls `f` with every leaf and its path probability.
    pub fn for_each_leaf<F: FnMut(&Leaf, f64)>(&self, mut f: F) {
        self.root.visit(1.0, &mut f);
    }

    /// Path probability of every leaf, zero-mass leaves included.
    pub fn leaf_distribution(&self) -> BTreeMap<Outcome, f64> {
        let mut out = BTreeMap::new();
        self.for_each_leaf(|leaf, mass| {
            *out.entry(leaf.outcome).or_insert(0.0) += mass;
        });
        out
    }

    /// Numerator and denominator of expected accuracy. The denominator is 1
    /// unless interventions are excluded.
    fn accuracy_terms(&self) -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        let policy = self.policy;
        self.for_each_leaf(|leaf, mass| match (leaf.correctness, policy) {
            (Some(c), _) => {
                num += mass * c;
                den += mass;
            }
            (None, InterventionPolicy::CountsAsCorrect) => {
                num += mass;
                den += mass;
            }
            (None, InterventionPolicy::Excluded) => {}
        });
        if policy == InterventionPolicy::CountsAsCorrect {
            den = 1.0;
        }
        (num, den)
    }

    pub fn expected_accuracy(&self) -> Result<f64, TreeError> {
        let (num, den) = self.accuracy_terms();
        if den <= 0.0 {
            return Err(TreeError::NoAssessableMass);
        }
        Ok(num / den)
    }

    pub fn expected_risk(&self, costs: &CostModel) -> Result<f64, TreeError> {
        let mut risk = 0.0;
        let mut missing = None;
        self.for_each_leaf(|leaf, mass| match costs.get(leaf.outcome.kind) {
            Some(c) => risk += mass * c,
            None if mass > 0.0 && missing.is_none() => missing = Some(leaf.outcome),
            None => {}
        });
        match missing {
            Some(outcome) => Err(TreeError::Unpriced(outcome)),
            None => Ok(risk),
        }
    }

    fn check_param(&self, param: Param) -> Result<(), TreeError> {
        let used = match (self.topology, param) {
            (_, Param::PEvent) => true,
            (Topology::Base, Param::Tpr | Param::Tnr) => false,
            (Topology::Rv, Param::Tpr | Param::Tnr) => true,
            (Topology::Base, Param::Accuracy(c)) => c.verdict.is_none(),
            (Topology::Rv, Param::Accuracy(c)) => c.verdict == Some(false),
        };
        if used {
            Ok(())
        } else {
            Err(TreeError::UnknownParameter {
                param,
                topology: self.topology,
            })
        }
    }

    /// The same tree with one parameter replaced.
    pub fn with_param(&self, param: Param, value: f64) -> Result<EventTree, TreeError> {
        self.check_param(param)?;
        let mut params = self.params.clone();
        match param {
            Param::PEvent => params.p_event = value,
            Param::Tpr => params.profile = DetectorProfile::new(value, params.profile.tnr())
                .map_err(|_| TreeError::Domain { name: "tpr".into(), value })?,
            Param::Tnr => params.profile = DetectorProfile::new(params.profile.tpr(), value)
                .map_err(|_| TreeError::Domain { name: "tnr".into(), value })?,
            Param::Accuracy(c) => {
                if params.accuracy(c) != Some(Accuracy::DataFree) {
                    params.accuracies.insert(c, Accuracy::Known(value));
                }
            }
        }
        EventTree::build(self.topology, &params, self.policy)
    }

    fn value_terms(&self, costs: Option<&CostModel>) -> Result<(f64, f64), TreeError> {
        match costs {
            Some(costs) => Ok((self.expected_risk(costs)?, 1.0)),
            None => Ok(self.accuracy_terms()),
        }
    }

    /// Exact partial derivative of expected accuracy, or of expected risk
    /// when `costs` is given, with respect to `param`.
    pub fn sensitivity(&self, param: Param, costs: Option<&CostModel>) -> Result<f64, TreeError> {
        self.check_param(param)?;
        let (num, den) = self.value_terms(costs)?;
        let (num_hi, den_hi) = self.with_param(param, 1.0)?.value_terms(costs)?;
        let (num_lo, den_lo) = self.with_param(param, 0.0)?.value_terms(costs)?;
        let d_num = num_hi - num_lo;
        let d_den = den_hi - den_lo;
        if den <= 0.0 {
            return Err(TreeError::NoAssessableMass);
        }
        if d_den == 0.0 {
            Ok(d_num / den)
        } else {
            Ok((d_num * den - num * d_den) / (den * den))
        }
    }
}

/// Nine significant digits, shortest form.
struct Short(f64);

impl fmt::Display for Short {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rounded: f64 = format!("{:.8e}", self.0).parse().map_err(|_| fmt::Error)?;
        write!(f, "{rounded}")
    }
}

impl fmt::Display for EventTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.params;
        write!(f, "{} event tree: p_event={}", self.topology, Short(p.p_event))?;
        if self.topology == Topology::Rv {
            let (tpr, tnr) = (Short(p.profile.tpr()), Short(p.profile.tnr()));
            write!(f, ", tpr={tpr}, tnr={tnr}")?;
        }
        writeln!(f)?;
        self.root.write_outline(f, 0, 1.0)
    }
}

fn resolve_base(params: &TreeParams) -> Result<TreeParams, TreeError> {
    let mut resolved = params.clone();
    for condition in [Condition::IND, Condition::OOD] {
        if params.accuracy(condition).is_none() {
            if event_weight(params.p_event, condition.is_ood) > 0.0 {
                return Err(TreeError::MissingAccuracy(condition));
            }
            resolved.accuracies.insert(condition, Accuracy::DataFree);
        }
    }
    Ok(resolved)
}

fn verdict_weights(profile: &DetectorProfile, is_ood: bool) -> [f64; 2] {
    // [negative, positive]
    if is_ood {
        [1.0 - profile.tpr(), profile.tpr()]
    } else {
        [profile.tnr(), 1.0 - profile.tnr()]
    }
}

fn event_split(params: &TreeParams, free: [bool; 2]) -> Result<[f64; 2], TreeError> {
    if free == [true, true] {
        return Err(TreeError::NoData(Condition::IND));
    }
    Ok(forced_split(
        [event_weight(params.p_event, false), event_weight(params.p_event, true)],
        free,
    ))
}

fn resolve_rv(params: &TreeParams) -> Result<TreeParams, TreeError> {
    let mut resolved = params.clone();
    let declared_free = |c: Condition| params.accuracy(c) == Some(Accuracy::DataFree);
    let mut event_free = [false; 2];
    let mut splits = [[0.0; 2]; 2];
    for is_ood in [false, true] {
        let free = [
            declared_free(Condition::with_verdict(is_ood, false)),
            declared_free(Condition::with_verdict(is_ood, true)),
        ];
        event_free[usize::from(is_ood)] = free == [true, true];
        splits[usize::from(is_ood)] =
            forced_split(verdict_weights(&params.profile, is_ood), free);
    }
    if event_free == [true, true] {
        return Err(TreeError::NoData(Condition::IND));
    }
    let events = event_split(params, event_free)?;
    for is_ood in [false, true] {
        let negative = Condition::with_verdict(is_ood, false);
        if params.accuracy(negative).is_none() {
            let mass = events[usize::from(is_ood)] * splits[usize::from(is_ood)][0];
            if mass > 0.0 {
                return Err(TreeError::MissingAccuracy(negative));
            }
            resolved.accuracies.insert(negative, Accuracy::DataFree);
        }
    }
    Ok(resolved)
}

fn base_root(params: &TreeParams) -> Result<Node, TreeError> {
    let free = [Condition::IND, Condition::OOD]
        .map(|c| params.accuracy(c) == Some(Accuracy::DataFree));
    let weights = event_split(params, free)?;
    let children = [false, true]
        .into_iter()
        .map(|is_ood| {
            let condition = Condition::event(is_ood);
            Edge {
                probability: weights[usize::from(is_ood)],
                node: Node::model_split(
                    condition,
                    params.accuracy(condition).unwrap_or(Accuracy::DataFree),
                ),
            }
        })
        .collect();
    Ok(Node::Branch {
        condition: None,
        children,
    })
}

fn rv_root(params: &TreeParams) -> Result<Node, TreeError> {
    let free_of = |c: Condition| params.accuracy(c) == Some(Accuracy::DataFree);
    let mut event_free = [false; 2];
    let mut event_nodes = Vec::with_capacity(2);
    for is_ood in [false, true] {
        let negative = Condition::with_verdict(is_ood, false);
        let positive = Condition::with_verdict(is_ood, true);
        let free = [free_of(negative), free_of(positive)];
        event_free[usize::from(is_ood)] = free == [true, true];
        let [w_neg, w_pos] = forced_split(verdict_weights(&params.profile, is_ood), free);
        let intervention = if is_ood {
            OutcomeKind::NecessaryIntervention
        } else {
            OutcomeKind::UnnecessaryIntervention
        };
        let neg_edge = Edge {
            probability: w_neg,
            node: Node::model_split(
                negative,
                params.accuracy(negative).unwrap_or(Accuracy::DataFree),
            ),
        };
        let pos_edge = Edge {
            probability: w_pos,
            node: Node::leaf(positive, intervention, None),
        };
        // verdict branches in the order the event is usually judged
        let children = if is_ood {
            vec![pos_edge, neg_edge]
        } else {
            vec![neg_edge, pos_edge]
        };
        event_nodes.push(Node::Branch {
            condition: Some(Condition::event(is_ood)),
            children,
        });
    }
    let weights = event_split(params, event_free)?;
    let children = event_nodes
        .into_iter()
        .zip(weights)
        .map(|(node, probability)| Edge { probability, node })
        .collect();
    Ok(Node::Branch {
        condition: None,
        children,
    })
}
