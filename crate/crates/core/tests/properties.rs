use proptest::prelude::*;

use shiftrisk::detectors::detector_grid;
use shiftrisk::estimation::{forward_bias, rogan_gladen, DetectorProfile, VerdictTrace};
use shiftrisk::event_tree::{
    Accuracy, Condition, CostModel, EventTree, InterventionPolicy, OutcomeKind, Param, Topology,
    TreeParams,
};
use shiftrisk::monitor::{Monitor, MonitorConfig};
use shiftrisk::presets::polyp_costs;

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

fn topology() -> impl Strategy<Value = Topology> {
    prop_oneof![Just(Topology::Base), Just(Topology::Rv)]
}

fn policy() -> impl Strategy<Value = InterventionPolicy> {
    prop_oneof![
        Just(InterventionPolicy::CountsAsCorrect),
        Just(InterventionPolicy::Excluded)
    ]
}

fn costs() -> impl Strategy<Value = CostModel> {
    prop::array::uniform4(0.0..5000.0f64).prop_map(|c| {
        CostModel::new(OutcomeKind::ALL.iter().copied().zip(c)).unwrap()
    })
}

fn params(topology: Topology, p: f64, tpr: f64, tnr: f64, a_ind: f64, a_ood: f64) -> TreeParams {
    let (ind, ood) = match topology {
        Topology::Base => (Condition::IND, Condition::OOD),
        Topology::Rv => (Condition::IND_NEG, Condition::OOD_NEG),
    };
    TreeParams {
        p_event: p,
        profile: DetectorProfile::new(tpr, tnr).unwrap(),
        accuracies: [(ind, Accuracy::Known(a_ind)), (ood, Accuracy::Known(a_ood))]
            .into_iter()
            .collect(),
    }
}

fn used_params(topology: Topology) -> Vec<Param> {
    match topology {
        Topology::Base => vec![
            Param::PEvent,
            Param::Accuracy(Condition::IND),
            Param::Accuracy(Condition::OOD),
        ],
        Topology::Rv => vec![
            Param::PEvent,
            Param::Tpr,
            Param::Tnr,
            Param::Accuracy(Condition::IND_NEG),
            Param::Accuracy(Condition::OOD_NEG),
        ],
    }
}

proptest! {
    #[test]
    fn leaf_mass_sums_to_one(
        topo in topology(), p in unit(), tpr in unit(), tnr in unit(), a in unit(), b in unit()
    ) {
        let tree = EventTree::build(topo, &params(topo, p, tpr, tnr, a, b), InterventionPolicy::default()).unwrap();
        let leaves = tree.leaf_distribution();
        prop_assert_eq!(leaves.len(), if topo == Topology::Rv { 6 } else { 4 });
        let total: f64 = leaves.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(leaves.values().all(|m| *m >= 0.0));
    }

    #[test]
    fn risk_is_affine_in_each_parameter(
        topo in topology(), p in unit(), tpr in unit(), tnr in unit(), a in unit(), b in unit(),
        costs in costs(), x in unit(), y in unit()
    ) {
        let tree = EventTree::build(topo, &params(topo, p, tpr, tnr, a, b), InterventionPolicy::default()).unwrap();
        for param in used_params(topo) {
            let slope = tree.sensitivity(param, Some(&costs)).unwrap();
            let at = |v: f64| tree.with_param(param, v).unwrap().expected_risk(&costs).unwrap();
            let secant = at(y) - at(x);
            prop_assert!((secant - slope * (y - x)).abs() < 1e-8, "{param}: {secant} vs {}", slope * (y - x));
        }
    }

    #[test]
    fn accuracy_sensitivity_matches_finite_difference(
        topo in topology(), pol in policy(), p in 0.05..0.95f64, tpr in 0.05..0.95f64,
        tnr in 0.05..0.95f64, a in 0.05..0.95f64, b in 0.05..0.95f64
    ) {
        let tree = EventTree::build(topo, &params(topo, p, tpr, tnr, a, b), pol).unwrap();
        let h = 1e-6;
        for param in used_params(topo) {
            let value = match param {
                Param::PEvent => p,
                Param::Tpr => tpr,
                Param::Tnr => tnr,
                Param::Accuracy(c) if !c.is_ood => a,
                Param::Accuracy(_) => b,
            };
            let at = |v: f64| tree.with_param(param, v).unwrap().expected_accuracy().unwrap();
            let fd = (at(value + h) - at(value - h)) / (2.0 * h);
            let exact = tree.sensitivity(param, None).unwrap();
            prop_assert!((fd - exact).abs() < 1e-6, "{param}: fd {fd} exact {exact}");
        }
    }

    #[test]
    fn base_accuracy_lies_between_partition_accuracies(p in unit(), a in unit(), b in unit()) {
        let tree = EventTree::build(Topology::Base, &params(Topology::Base, p, 1.0, 1.0, a, b), InterventionPolicy::default()).unwrap();
        let acc = tree.expected_accuracy().unwrap();
        prop_assert!(acc >= a.min(b) - 1e-12 && acc <= a.max(b) + 1e-12);
    }

    #[test]
    fn correction_inverts_bias(p in unit(), tpr in unit(), tnr in unit()) {
        prop_assume!(tpr + tnr - 1.0 > 0.05);
        let profile = DetectorProfile::new(tpr, tnr).unwrap();
        let est = rogan_gladen(forward_bias(p, &profile), &profile, 0.05).unwrap();
        prop_assert!((est.uncorrected - p).abs() < 1e-12);
        prop_assert!(!est.clamped || (p - est.corrected).abs() < 1e-12);
    }

    #[test]
    fn clamp_flag_marks_out_of_range(raw in unit(), tpr in unit(), tnr in unit()) {
        prop_assume!(tpr + tnr - 1.0 > 0.05);
        let profile = DetectorProfile::new(tpr, tnr).unwrap();
        let est = rogan_gladen(raw, &profile, 0.05).unwrap();
        prop_assert!((0.0..=1.0).contains(&est.corrected));
        prop_assert_eq!(est.clamped, !(0.0..=1.0).contains(&est.uncorrected));
    }

    #[test]
    fn trace_holds_most_recent_verdicts(verdicts in prop::collection::vec(any::<bool>(), 0..300), cap in 1usize..64) {
        let mut trace = VerdictTrace::new(cap).unwrap();
        for v in &verdicts {
            trace.push(*v);
        }
        let start = verdicts.len().saturating_sub(cap);
        let tail = &verdicts[start..];
        prop_assert_eq!(trace.fill(), tail.len());
        prop_assert_eq!(trace.positives(), tail.iter().filter(|v| **v).count());
        prop_assert!(trace.iter().eq(tail.iter().copied()));
    }

    #[test]
    fn more_positives_never_lower_the_estimate(k in 0usize..100, extra in 1usize..20) {
        let extra = extra.min(100 - k.min(100));
        prop_assume!(extra > 0);
        let config = MonitorConfig::base(DetectorProfile::new(0.8, 0.7).unwrap(), 0.9, 0.4)
            .with_costs(polyp_costs());
        let run = |ones: usize| {
            let mut m = Monitor::new(config.clone()).unwrap();
            for i in 0..100 {
                m.ingest(i < ones);
            }
            m.assess().unwrap()
        };
        let (lo, hi) = (run(k), run(k + extra));
        prop_assert!(hi.p_event.corrected >= lo.p_event.corrected);
        prop_assert!(hi.expected_accuracy <= lo.expected_accuracy + 1e-12);
    }

    #[test]
    fn monitor_config_round_trips(cap in 1usize..500, decay in 0.01..=1.0f64, tpr in 0.6..1.0f64, tnr in 0.6..1.0f64) {
        let config = MonitorConfig::base(DetectorProfile::new(tpr, tnr).unwrap(), 0.9, 0.33)
            .with_capacity(cap)
            .with_costs(polyp_costs());
        let config = MonitorConfig { decay, ..config };
        let json = serde_json::to_string(&config).unwrap();
        let back: MonitorConfig = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, config);
    }
}

#[test]
fn grid_is_closed_under_swapping_rates() {
    for step in [0.1, 0.05, 0.25] {
        let grid = detector_grid(step, 0.5).unwrap();
        for p in &grid {
            assert!(
                grid.iter().any(|q| (q.tpr() - p.tnr()).abs() < 1e-12 && (q.tnr() - p.tpr()).abs() < 1e-12),
                "{p} has no mirror at step {step}"
            );
            assert!(p.informativeness() > 0.0);
        }
    }
}
