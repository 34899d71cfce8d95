use std::collections::BTreeMap;

use mfload::balancer::{predicted_total_imbalance, Balancer, Policy, PolicyKind};
use mfload::cluster::{
    class_breakdown, ServerId, ServerSnapshot, ServerSpec, ServerState, WindowedUtilization,
};
use mfload::fractal::{delta_h, estimate_default, estimate_hurst_curve, QGrid, ScaleGrid};
use mfload::metrics::{
    cluster_imbalance, resource_imbalance, server_imbalance, system_averages, ImbalanceReport,
    Weights,
};
use mfload::sim::{self, Cell, MonitoringMode, Scenario};
use mfload::traffic::{
    deterministic_cascade, generate_cascade, generate_fgn, CascadeParams, ClassId, Request,
    RequestId,
};
use mfload::Resources;
use proptest::prelude::*;

fn resources(max: f64) -> impl Strategy<Value = Resources> {
    (0.0..=max, 0.0..=max, 0.0..=max).prop_map(|(a, b, c)| Resources::new(a, b, c))
}

fn capacities() -> impl Strategy<Value = Resources> {
    (50.0..1000.0, 50.0..1000.0, 50.0..1000.0).prop_map(|(a, b, c)| Resources::new(a, b, c))
}

fn cluster_state(max_servers: usize) -> impl Strategy<Value = Vec<ServerSnapshot>> {
    prop::collection::vec((resources(1.0), capacities()), 1..=max_servers).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (u, c))| ServerSnapshot::from_util(ServerId(i as u32 + 1), c, u))
            .collect()
    })
}

fn weights() -> impl Strategy<Value = Weights> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| {
        let (lo, hi) = (x.min(y), x.max(y));
        Weights::new(lo, hi - lo, 1.0 - hi).unwrap()
    })
}

fn request(demand: Resources) -> Request {
    Request {
        id: RequestId(0),
        class: ClassId(1),
        arrival: 0.0,
        duration: 10.0,
        demand,
    }
}

fn cascade_oracle(w: f64, q: f64) -> f64 {
    let p = 0.5 + w;
    (1.0 - (p.powf(q) + (1.0 - p).powf(q)).log2()) / q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn estimator_is_affine_invariant(seed in 0u64..1000, alpha in 0.1f64..50.0, negate: bool, beta in -100.0f64..100.0) {
        let x = generate_fgn(0.7, 1 << 12, seed).unwrap();
        let alpha = if negate { -alpha } else { alpha };
        let y: Vec<f64> = x.iter().map(|v| alpha * v + beta).collect();
        let (a, b) = (estimate_default(&x).unwrap(), estimate_default(&y).unwrap());
        for (p, r) in a.points().iter().zip(b.points()) {
            prop_assert_eq!(p.q, r.q);
            prop_assert!((p.h - r.h).abs() <= 1e-6, "q={} {} vs {}", p.q, p.h, r.h);
        }
    }

    #[test]
    fn deterministic_cascade_matches_oracle(w in 0.05f64..0.3) {
        let c = deterministic_cascade(14, w).unwrap();
        let curve = estimate_default(&c).unwrap();
        for p in curve.points() {
            let expected = cascade_oracle(w, p.q);
            prop_assert!((p.h - expected).abs() <= 0.08, "w={w} q={} h={} oracle={expected}", p.q, p.h);
        }
    }

    #[test]
    fn delta_h_is_first_minus_last_point(seed in 0u64..1000, h in 0.55f64..0.95) {
        let x = generate_fgn(h, 1 << 12, seed).unwrap();
        let curve = estimate_default(&x).unwrap();
        let pts = curve.points();
        let expected = pts[0].h - pts[pts.len() - 1].h;
        prop_assert_eq!(curve.delta_h.to_bits(), expected.to_bits());
        prop_assert_eq!(delta_h(&curve).unwrap().to_bits(), expected.to_bits());
        prop_assert!(pts.iter().all(|p| (0.0..=1.0).contains(&p.r2)));
    }
}

proptest! {
    #[test]
    fn q_grid_rejects_zero_and_requires_two(mut qs in prop::collection::btree_set(-8i32..=8, 1..10)) {
        let with_zero: Vec<f64> = qs.iter().map(|&q| q as f64).collect();
        prop_assert_eq!(QGrid::new(with_zero).is_ok(), !qs.contains(&0) && qs.contains(&2));
        qs.remove(&0);
        qs.insert(2);
        prop_assert!(QGrid::new(qs.iter().map(|&q| q as f64).collect()).is_ok());
    }

    #[test]
    fn scale_grid_respects_bounds(len in 256usize..20000, order in 1usize..4) {
        if let Ok(g) = ScaleGrid::dyadic(len, 16, order) {
            let s = g.scales();
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s[0] >= order + 2);
            prop_assert!(*s.last().unwrap() <= len / 4);
        }
    }

    #[test]
    fn weights_must_sum_to_one(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let sum = a + b + c;
        prop_assert_eq!(Weights::new(a, b, c).is_ok(), (sum - 1.0).abs() <= 1e-9);
        prop_assert!(Weights::new(a / sum, b / sum, c / sum).is_ok());
    }

    #[test]
    fn imbalance_is_linear_in_weights(state in cluster_state(6), w in weights()) {
        let avg = system_averages(&state).unwrap();
        let single = [
            Weights::new(1.0, 0.0, 0.0).unwrap(),
            Weights::new(0.0, 1.0, 0.0).unwrap(),
            Weights::new(0.0, 0.0, 1.0).unwrap(),
        ];
        for s in &state {
            let parts: Vec<f64> = single.iter().map(|e| server_imbalance(s.util, avg, e)).collect();
            let mixed = server_imbalance(s.util, avg, &w);
            let linear = w.cpu() * parts[0] + w.ram() * parts[1] + w.net() * parts[2];
            prop_assert!((mixed - linear).abs() <= 1e-12);
            let equal = server_imbalance(s.util, avg, &Weights::default());
            prop_assert!((equal - parts.iter().sum::<f64>() / 3.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn averages_are_convex_combinations(state in cluster_state(6)) {
        let avg = system_averages(&state).unwrap();
        for pick in [|r: Resources| r.cpu, |r: Resources| r.ram, |r: Resources| r.net] {
            let lo = state.iter().map(|s| pick(s.util)).fold(f64::INFINITY, f64::min);
            let hi = state.iter().map(|s| pick(s.util)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(pick(avg) >= lo - 1e-15 && pick(avg) <= hi + 1e-15);
        }
    }

    #[test]
    fn imbalance_is_nonnegative_and_permutation_invariant(
        state in cluster_state(6),
        w in weights(),
        perm in Just(()).prop_perturb(|_, mut rng| rng.random::<u64>()),
    ) {
        let report = ImbalanceReport::evaluate(1.0, &state, &w).unwrap();
        prop_assert!(report.imb_tot >= 0.0);
        prop_assert!(report.servers.iter().all(|s| s.imbalance >= 0.0));
        let mean = report.servers.iter().map(|s| s.imbalance).sum::<f64>() / state.len() as f64;
        prop_assert!((report.imb_tot - mean).abs() <= 1e-12);

        let mut shuffled = state.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (perm.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let other = ImbalanceReport::evaluate(1.0, &shuffled, &w).unwrap();
        prop_assert!((other.imb_tot - report.imb_tot).abs() <= 1e-12);
        let (a, b) = (
            resource_imbalance(&state, system_averages(&state).unwrap()),
            resource_imbalance(&shuffled, system_averages(&shuffled).unwrap()),
        );
        prop_assert!((a.cpu - b.cpu).abs() <= 1e-12);
        prop_assert!((a.ram - b.ram).abs() <= 1e-12);
        prop_assert!((a.net - b.net).abs() <= 1e-12);
        for s in &other.servers {
            let orig = report.servers.iter().find(|r| r.id == s.id).unwrap();
            prop_assert!((orig.imbalance - s.imbalance).abs() <= 1e-12);
        }
    }

    #[test]
    fn greedy_choice_is_optimal(state in cluster_state(6), demand in resources(80.0), w in weights()) {
        let r = request(demand);
        let policy = Policy::new(PolicyKind::MinImbalance, w);
        let before = state.clone();
        let d = Balancer::new(policy).dispatch(&state, &r).unwrap();
        prop_assert_eq!(&state, &before);
        let chosen = predicted_total_imbalance(&state, &r, d.server, &w).unwrap();
        prop_assert_eq!(Some(chosen), d.predicted_imb_tot);
        for s in &state {
            let alt = predicted_total_imbalance(&state, &r, s.id, &w).unwrap();
            prop_assert!(chosen <= alt + 1e-12);
        }
        let again = Balancer::new(policy).dispatch(&state, &r).unwrap();
        prop_assert_eq!(d, again);
    }

    #[test]
    fn greedy_choice_ignores_common_scale(
        state in cluster_state(6),
        demand in resources(80.0),
        exp in -3i32..=4,
        kind in prop_oneof![Just(PolicyKind::MinImbalance), Just(PolicyKind::LeastLoaded)],
    ) {
        let alpha = 2f64.powi(exp);
        let scaled: Vec<ServerSnapshot> = state
            .iter()
            .map(|s| ServerSnapshot::from_util(s.id, s.capacity * alpha, s.util))
            .collect();
        let policy = Policy::new(kind, Weights::default());
        let a = Balancer::new(policy).dispatch(&state, &request(demand)).unwrap();
        let b = Balancer::new(policy).dispatch(&scaled, &request(demand * alpha)).unwrap();
        prop_assert_eq!(a.server, b.server);
    }

    #[test]
    fn admit_and_release_are_inverse(
        demands in prop::collection::vec((resources(150.0), 1u32..4), 1..40),
        order in Just(()).prop_perturb(|_, mut rng| rng.random::<u64>()),
    ) {
        let mut server = ServerState::new(ServerSpec::new(1, 400.0, 450.0, 300.0).unwrap());
        let initial = server.util();
        let reqs: Vec<Request> = demands
            .iter()
            .enumerate()
            .map(|(i, &(d, class))| Request { id: RequestId(i as u64), class: ClassId(class), ..request(d) })
            .collect();
        for r in &reqs {
            server.admit(r).unwrap();
            prop_assert!(server.util().all(|u| (0.0..=1.0).contains(&u)));
        }
        let mut ids: Vec<RequestId> = reqs.iter().map(|r| r.id).collect();
        let n = ids.len();
        for i in (1..n).rev() {
            ids.swap(i, (order.wrapping_mul(2 * i as u64 + 1) % (i as u64 + 1)) as usize);
        }
        for id in ids {
            prop_assert!(server.release(id).is_some());
            prop_assert!(server.util().all(|u| (0.0..=1.0).contains(&u)));
        }
        prop_assert_eq!(server.util(), initial);
        prop_assert_eq!(server.demand(), Resources::ZERO);
        prop_assert!(server.measured_by_class().is_empty());
    }

    #[test]
    fn class_shares_are_scale_invariant_and_preserve_totals(
        measured in prop::collection::btree_map(1u32..6, resources(100.0), 1..5),
        avg in resources(1.0),
        alpha in 0.01f64..100.0,
    ) {
        let measured: BTreeMap<ClassId, Resources> =
            measured.into_iter().map(|(k, v)| (ClassId(k), v)).collect();
        let scaled = measured.iter().map(|(&k, &v)| (k, v * alpha)).collect();
        let util = WindowedUtilization { avg, window: 10.0, sample_period: 1.0, samples: 10 };
        let a = class_breakdown(&util, &measured).unwrap();
        let b = class_breakdown(&util, &scaled).unwrap();
        for (x, y) in a.classes.iter().zip(&b.classes) {
            prop_assert!((x.share.cpu - y.share.cpu).abs() <= 1e-12);
            prop_assert!((x.share.ram - y.share.ram).abs() <= 1e-12);
            prop_assert!((x.share.net - y.share.net).abs() <= 1e-12);
        }
        let total = a.classes.iter().fold(Resources::ZERO, |acc, c| acc + c.load);
        prop_assert!((total.cpu - avg.cpu).abs() <= 1e-9);
        prop_assert!((total.ram - avg.ram).abs() <= 1e-9);
        prop_assert!((total.net - avg.net).abs() <= 1e-9);
    }
}

fn short_scenario(seed: u64, policy: PolicyKind, reject: bool, monitoring: MonitoringMode) -> Scenario {
    let mut s = Scenario::default().with_cell(0.8, 2.0, seed);
    s.run_length = 120.0;
    s.final_window = 60.0;
    s.policy = policy;
    s.reject_overload = reject;
    s.monitoring = monitoring;
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn runs_are_deterministic_ordered_and_conserve_requests(
        seed in 0u64..10_000,
        policy in prop_oneof![
            Just(PolicyKind::RoundRobin),
            Just(PolicyKind::LeastLoaded),
            Just(PolicyKind::MinImbalance),
        ],
        reject: bool,
        monitoring in prop_oneof![
            Just(MonitoringMode::Fixed { interval: 10.0 }),
            Just(MonitoringMode::PerRequest),
            Just(MonitoringMode::Adaptive { initial: 10.0, min: 2.0, max: 30.0, cv_threshold: 0.5 }),
        ],
    ) {
        let s = short_scenario(seed, policy, reject, monitoring);
        let a = sim::run(&s).unwrap();
        prop_assert!(a.reports.windows(2).all(|w| w[0].t < w[1].t));
        prop_assert_eq!(a.stats.admitted + a.stats.dropped, a.stats.materialized);
        if !reject {
            prop_assert_eq!(a.stats.dropped, 0);
        }
        prop_assert!(a.reports.iter().all(|r| r.imb_tot >= 0.0));
        let b = sim::run(&s).unwrap();
        prop_assert_eq!(&a.reports, &b.reports);
        prop_assert_eq!(a.stats, b.stats);
    }
}

#[test]
fn adding_replicates_leaves_existing_ones_unchanged() {
    let base = Scenario {
        run_length: 90.0,
        final_window: 30.0,
        ..Scenario::default()
    };
    let cells = [Cell { h: 0.7, delta_h: 1.5 }, Cell { h: 0.9, delta_h: 4.0 }];
    let two = sim::sweep(&base, &cells, 2).unwrap();
    let three = sim::sweep(&base, &cells, 3).unwrap();
    for (a, b) in two.iter().zip(&three) {
        assert_eq!(a.replicates[..], b.replicates[..2]);
    }
    let alone = sim::sweep(&base, &cells[..1], 2).unwrap();
    assert_eq!(alone[0].replicates, two[0].replicates);
}

#[test]
fn measured_spread_grows_with_weight_spread() {
    let spreads = [0.05, 0.15, 0.25, 0.35, 0.45];
    let means: Vec<f64> = spreads
        .iter()
        .map(|&w| {
            let params = CascadeParams::new(14, w, 0.7).unwrap();
            (0..10)
                .map(|seed| {
                    let c = generate_cascade(&params, seed).unwrap();
                    estimate_default(&c).unwrap().delta_h
                })
                .sum::<f64>()
                / 10.0
        })
        .collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}

#[test]
fn cluster_imbalance_matches_report() {
    let state: Vec<ServerSnapshot> = (1..=4)
        .map(|i| {
            ServerSnapshot::from_util(
                ServerId(i),
                Resources::splat(100.0 * i as f64),
                Resources::new(0.1 * i as f64, 0.5, 0.9 - 0.2 * i as f64),
            )
        })
        .collect();
    let w = Weights::default();
    let r = ImbalanceReport::evaluate(0.0, &state, &w).unwrap();
    assert_eq!(r.imb_tot, cluster_imbalance(&state, &w).unwrap());
}

#[test]
fn custom_scales_and_q_grid() {
    let x = generate_fgn(0.6, 1 << 12, 3).unwrap();
    let q = QGrid::new(vec![-2.0, 2.0, 4.0]).unwrap();
    let scales = ScaleGrid::new(vec![16, 32, 64, 128, 256], 2).unwrap();
    let curve = estimate_hurst_curve(&x, &q, &scales).unwrap();
    assert_eq!(curve.points().len(), 3);
    assert!((curve.hurst() - 0.6).abs() < 0.1);
}
