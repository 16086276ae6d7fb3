use abp_core::model::generate_grid;
use abp_core::propagation::{consistency_violation, converge_using_bp, InitialPriority};
use abp_core::{run, EngineConfig, Flow, FactorGraph, Method, Propagator, RunOutcome, Snapshot, SnapshotKind, SparseState, WorkClock};
use proptest::prelude::*;

mod common;

fn collect(g: &FactorGraph, config: &EngineConfig) -> (Vec<Snapshot>, RunOutcome) {
    let mut snaps = Vec::new();
    let out = run(g, config, &WorkClock::default(), &mut |s| {
        snaps.push(s.clone());
        Flow::Continue
    });
    (snaps, out)
}

const SPARSE: [Method; 4] = [Method::TruncBp, Method::Random, Method::Fixed, Method::Dynamic];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn snapshot_streams_are_deterministic(seed in any::<u64>(), m in 0usize..6, every in 1u64..20) {
        let g = generate_grid(3, 3, 4, 1.0, seed).unwrap();
        let mut config = EngineConfig::new(Method::ALL[m]);
        config.seed = seed;
        config.cadence.every_updates = Some(every);
        let (a, oa) = collect(&g, &config);
        let (b, ob) = collect(&g, &config);
        prop_assert_eq!(a, b);
        prop_assert_eq!(oa, ob);
    }

    #[test]
    fn certified_snapshots_are_consistent(seed in any::<u64>(), m in 0usize..4) {
        let g = generate_grid(3, 4, 5, 1.0, seed).unwrap();
        let mut config = EngineConfig::new(SPARSE[m]);
        config.seed = seed;
        let (snaps, out) = collect(&g, &config);
        prop_assert!(out.completed);
        for s in snaps.iter().filter(|s| s.kind == SnapshotKind::Certified) {
            prop_assert!(s.consistent);
            prop_assert!(s.max_residual <= config.epsilon);
            prop_assert!(s.consistency_violation <= 10.0 * config.epsilon, "{}", s.consistency_violation);
        }
        prop_assert!(snaps.windows(2).all(|w| w[0].domain_fill <= w[1].domain_fill));
        prop_assert!(snaps.windows(2).all(|w| w[0].growth_steps <= w[1].growth_steps));
    }

    #[test]
    fn completion_is_a_dense_fixed_point(seed in any::<u64>(), m in 1usize..4) {
        let g = generate_grid(3, 3, 4, 0.5, seed).unwrap();
        let config = EngineConfig::new(SPARSE[m]);
        let (_, out) = collect(&g, &config);
        prop_assert!(out.completed);
        prop_assert_eq!(out.final_snapshot.domain_fill, 1.0);
        prop_assert!(out.final_snapshot.consistency_violation <= 1e-5);
    }

    #[test]
    fn trees_reach_exact_marginals(seed in any::<u64>(), m in 0usize..6) {
        let g = common::random_tree(seed, 8, 4);
        let exact = abp_core::exact_marginals(&g).unwrap();
        let mut config = EngineConfig::new(Method::ALL[m]);
        config.epsilon = 1e-11;
        if config.method == Method::TruncBp {
            config.truncation_fraction = 1.0;
        }
        let (_, out) = collect(&g, &config);
        prop_assert!(out.completed);
        for (b, e) in out.final_snapshot.var_marginals.iter().zip(&exact.var_marginals) {
            prop_assert!(common::tv(b, e) <= 1e-8);
        }
    }

    #[test]
    fn budgets_bound_updates(seed in any::<u64>(), m in 0usize..6, budget in 0u64..200) {
        let g = generate_grid(3, 3, 5, 1.0, seed).unwrap();
        let mut config = EngineConfig::new(Method::ALL[m]);
        config.budget.max_updates = Some(budget);
        let (_, out) = collect(&g, &config);
        prop_assert!(out.final_snapshot.factor_updates <= budget);
        if let Some(last) = &out.last_consistent {
            prop_assert!(last.consistent);
            prop_assert!(last.factor_updates <= out.final_snapshot.factor_updates);
        }
    }
}

#[test]
fn bethe_tightens_at_certified_points() {
    let (mut pairs, mut increasing) = (0usize, 0usize);
    for seed in 0..10 {
        let g = generate_grid(5, 5, 10, 1.0, seed).unwrap();
        for method in [Method::Fixed, Method::Dynamic] {
            let (snaps, _) = collect(&g, &EngineConfig::new(method));
            let bethe: Vec<f64> = snaps
                .iter()
                .filter(|s| s.kind == SnapshotKind::Certified)
                .map(|s| s.bethe_value)
                .collect();
            for w in bethe.windows(2) {
                pairs += 1;
                increasing += usize::from(w[1] >= w[0] - 1e-9);
            }
        }
    }
    let share = increasing as f64 / pairs as f64;
    assert!(share >= 0.95, "nondecreasing share {share}");
}

#[test]
fn dense_schedules_agree_under_weak_coupling() {
    for seed in 0..5 {
        let g = generate_grid(3, 3, 6, 0.5, seed).unwrap();
        let mut config = EngineConfig::new(Method::DenseResidual);
        config.epsilon = 1e-9;
        let (_, a) = collect(&g, &config);
        config.method = Method::DenseRandom;
        config.seed = seed;
        let (_, b) = collect(&g, &config);
        assert!(a.completed && b.completed);
        for (x, y) in a.final_snapshot.var_marginals.iter().zip(&b.final_snapshot.var_marginals) {
            for (p, q) in x.iter().zip(y) {
                assert!((p - q).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn random_schedule_is_not_cheaper_than_residual() {
    let mut random_total = 0u64;
    let mut residual_total = 0u64;
    for seed in 0..10 {
        let g = generate_grid(10, 10, 100, 1.0, seed).unwrap();
        let (_, a) = collect(&g, &EngineConfig::new(Method::DenseResidual));
        let mut config = EngineConfig::new(Method::DenseRandom);
        config.seed = seed;
        let (_, b) = collect(&g, &config);
        assert!(a.completed && b.completed, "seed {seed}");
        residual_total += a.final_snapshot.factor_updates;
        random_total += b.final_snapshot.factor_updates;
    }
    assert!(random_total >= residual_total, "{random_total} < {residual_total}");
}

#[test]
fn violation_shrinks_while_converging_a_loopy_grid() {
    let g = generate_grid(3, 3, 4, 1.0, 11).unwrap();
    let mut state = SparseState::full(&g);
    let mut prop = Propagator::new(&g, InitialPriority::Stale);
    prop.converge(&mut state, 1e-12, Some(5));
    let mut trace = vec![consistency_violation(&state)];
    for _ in 0..20 {
        converge_using_bp(&mut state, &mut prop, 1e-12, Some(5));
        trace.push(consistency_violation(&state));
    }
    assert!(trace[0] > 0.0);
    let drops = trace.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(drops * 4 >= (trace.len() - 1) * 3, "{trace:?}");
    assert!(trace.last().unwrap() < &(trace[0] * 1e-3));
}
