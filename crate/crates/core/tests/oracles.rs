//! Cross-checks of the engine and analytics against independent routes:
//! exhaustive enumeration, probe calls, equilibrium laws and couplings.

use darsim_core::analytics::{blocking_bounds_hold, erlang_b, exact_failure_probability};
use darsim_core::engine::{
    run_coupled, run_immigration_death, run_simulation, run_simulation_with, run_superprocess,
    run_superprocess_with, BirthDeathConfig, EventKind, EventView, SimConfig, SimMode, TraceEvent,
};
use darsim_core::metrics::batch_mean_se;
use darsim_core::policy::sample_candidates;
use darsim_core::rng::RngStreams;
use darsim_core::{Capacity, CallRecord, LinkLoads, PolicyKind};
use rand::Rng;

/// Link-load snapshots taken every `stride` events of a short run.
fn reachable_states(n: usize, cap: u32, d: usize, seed: u64, events: u64, stride: usize) -> Vec<LinkLoads> {
    let config = SimConfig {
        warmup: 0.0,
        max_events: Some(events),
        ..SimConfig::new(n, 1.5, d, Capacity::Finite(cap), PolicyKind::ALL[seed as usize % 3], 1e9, seed)
    };
    let mut states = Vec::new();
    let mut k = 0;
    run_simulation_with(&config, &mut |_: &TraceEvent<'_>, view: &EventView<'_>| {
        if k % stride == 0 {
            states.push(view.links.clone());
        }
        k += 1;
    })
    .unwrap();
    states
}

/// Average over all pairs and all `(n-2)^d` candidate vectors of the
/// indicator that no candidate route is feasible.
fn brute_force_failure(links: &LinkLoads, d: u32) -> f64 {
    let n = links.n() as u32;
    let mut total = 0.0;
    let mut pairs = 0;
    for u in 0..n {
        for v in u + 1..n {
            pairs += 1;
            let others: Vec<u32> = (0..n).filter(|&w| w != u && w != v).collect();
            let m = others.len();
            let outcomes = m.pow(d);
            let mut failing = 0u64;
            for code in 0..outcomes {
                let mut c = code;
                let mut all_blocked = true;
                for _ in 0..d {
                    let w = others[c % m];
                    c /= m;
                    if links.route_feasible(u, v, w) {
                        all_blocked = false;
                        break;
                    }
                }
                if all_blocked {
                    failing += 1;
                }
            }
            total += failing as f64 / outcomes as f64;
        }
    }
    total / pairs as f64
}

#[test]
fn exact_failure_matches_exhaustive_enumeration() {
    let mut checked = 0;
    for n in 4..=8 {
        for d in 1..=3u32 {
            for cap in 1..=2 {
                for links in reachable_states(n, cap, d as usize, n as u64 * 7 + d as u64, 300, 60) {
                    let exact = exact_failure_probability(&links, d).unwrap().exact;
                    let brute = brute_force_failure(&links, d);
                    assert!((exact - brute).abs() <= 1e-12, "n={n} d={d}: {exact} vs {brute}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked >= 150);
}

#[test]
fn exact_failure_matches_probe_calls() {
    // The most congested of a few hundred visited states.
    let (links, exact) = reachable_states(10, 1, 2, 99, 20_000, 50)
        .into_iter()
        .map(|l| {
            let p = exact_failure_probability(&l, 2).unwrap().exact;
            (l, p)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!(exact > 0.01, "state too empty to be informative: {exact}");
    let mut rng = RngStreams::new(1234);
    let probes = 100_000;
    let mut failed = 0;
    for _ in 0..probes {
        let u = rng.endpoints.random_range(0..10u32);
        let mut v = rng.endpoints.random_range(0..9u32);
        if v >= u {
            v += 1;
        }
        let cands = sample_candidates(&mut rng.choices, 10, u, v, 2);
        if cands.as_slice().iter().all(|&w| !links.route_feasible(u, v, w)) {
            failed += 1;
        }
    }
    let p = failed as f64 / probes as f64;
    let se = (exact * (1.0 - exact) / probes as f64).sqrt();
    assert!((p - exact).abs() <= 3.0 * se, "probe {p} vs exact {exact} (se {se})");
}

#[test]
fn upper_bounds_hold_on_reachable_states() {
    for n in [6, 8, 10] {
        for links in reachable_states(n, 2, 2, n as u64, 2000, 100) {
            let check = blocking_bounds_hold(&links, 2).unwrap();
            let b = check.bounds;
            assert!(b.exact <= b.ub_sum + 1e-12 && b.exact <= b.ub_max + 1e-12);
            assert!(b.lb_min <= b.exact + 1e-12);
        }
    }
}

#[test]
fn infinite_capacity_matches_immigration_death_mean() {
    for policy in PolicyKind::ALL {
        let config = SimConfig {
            warmup: 50.0,
            ..SimConfig::new(50, 0.5, 2, Capacity::Infinite, policy, 200.0, 17)
        };
        let r = run_simulation(&config).unwrap();
        assert_eq!(r.metrics.blocked, 0);
        let (mean, se) = batch_mean_se(&r.total_calls_batches);
        assert!((r.metrics.mean_total_calls() - mean).abs() < 1e-6 * mean);
        assert!((mean - 612.5).abs() <= 3.0 * se, "{policy}: mean {mean}, se {se}");
    }
}

#[test]
fn same_seed_same_report() {
    let config = SimConfig {
        snapshot_every: 1.0,
        warmup: 5.0,
        ..SimConfig::new(12, 1.0, 2, Capacity::Finite(2), PolicyKind::UniformFeasible, 30.0, 77)
    };
    let a = run_simulation(&config).unwrap();
    let b = run_simulation(&config).unwrap();
    assert_eq!(a, b);
    let other = run_simulation(&SimConfig { seed: 78, ..config }).unwrap();
    assert_ne!(a.metrics, other.metrics);
}

#[test]
fn superprocess_pair_counts_are_poisson() {
    let config = SimConfig {
        mode: SimMode::Superprocess,
        snapshot_every: 1.0,
        warmup: 30.0,
        ..SimConfig::new(20, 1.0, 2, Capacity::Infinite, PolicyKind::FirstFit, 1030.0, 4)
    };
    let r = run_superprocess(&config).unwrap();
    assert_eq!(r.metrics.blocked, 0);
    let (mean, var) = r.metrics.pair_count_moments().unwrap();
    let samples: u64 = r.metrics.pair_count_histogram.iter().sum();
    assert_eq!(samples, 190 * 1001);
    // Pair counts are correlated over ~1 time unit; one snapshot per unit
    // gives ~190k nearly independent draws, s.e. ~ 0.0023.
    assert!((mean - 1.0).abs() <= 3.0 * 0.0023 * 2.0, "mean {mean}");
    assert!((0.9..=1.1).contains(&(var / mean)), "dispersion {}", var / mean);
}

#[test]
fn single_choice_superprocess_equals_uncapacitated_network() {
    let base = SimConfig {
        warmup: 0.0,
        ..SimConfig::new(9, 1.0, 1, Capacity::Infinite, PolicyKind::Balanced, 40.0, 31)
    };
    let mut cap_trace = Vec::new();
    run_simulation_with(&base, &mut |e: &TraceEvent<'_>, v: &EventView<'_>| {
        cap_trace.push((e.time, v.links.as_matrix().to_vec()))
    })
    .unwrap();
    let mut sup_trace = Vec::new();
    let sup = SimConfig { mode: SimMode::Superprocess, ..base };
    run_superprocess_with(&sup, &mut |e: &TraceEvent<'_>, v: &EventView<'_>| {
        sup_trace.push((e.time, v.links.as_matrix().to_vec()))
    })
    .unwrap();
    assert!(cap_trace.len() > 1000);
    assert_eq!(cap_trace, sup_trace);
}

#[test]
fn coupled_run_never_violates_domination() {
    for policy in PolicyKind::ALL {
        let config = SimConfig {
            mode: SimMode::Coupled,
            warmup: 0.0,
            max_events: Some(100_000),
            ..SimConfig::new(10, 2.0, 2, Capacity::Finite(1), policy, 1e9, 1)
        };
        let r = run_coupled(&config).unwrap();
        assert_eq!(r.event_count, 100_000);
        assert_eq!(r.violations, 0, "{policy}: {:?}", r.first_violation);
        assert!(r.ensure_dominated().is_ok());
        assert!(r.capacitated.blocked > 0);
        assert_eq!(r.superprocess.blocked, 0);
        assert_eq!(r.capacitated.arrivals, r.superprocess.arrivals);
    }
}

#[test]
fn first_call_accept_outcome_is_policy_independent() {
    // n = 5, D = 1, three initial calls leave many routes blocked.
    let initial = vec![
        routed(1, 0, 1, 2),
        routed(2, 3, 4, 2),
        routed(3, 0, 3, 4),
        routed(4, 1, 4, 3),
    ];
    let mut blocked_seen = 0;
    for seed in 0..300 {
        let mut outcome = Vec::new();
        for policy in PolicyKind::ALL {
            let config = SimConfig {
                warmup: 0.0,
                initial_calls: initial.clone(),
                ..SimConfig::new(5, 0.5, 2, Capacity::Finite(1), policy, 5.0, seed)
            };
            let mut first = None;
            run_simulation_with(&config, &mut |e: &TraceEvent<'_>, _: &EventView<'_>| {
                if first.is_none() && e.kind != EventKind::Depart {
                    first = Some((e.call_id, e.kind));
                }
            })
            .unwrap();
            outcome.push(first);
        }
        assert!(outcome.windows(2).all(|w| w[0] == w[1]), "seed {seed}: {outcome:?}");
        if matches!(outcome[0], Some((_, EventKind::ArriveBlock))) {
            blocked_seen += 1;
        }
    }
    assert!(blocked_seen > 0);
}

fn routed(id: u64, u: u32, v: u32, w: u32) -> CallRecord {
    CallRecord {
        id,
        u,
        v,
        candidates: vec![w],
        chosen: Some(0),
        arrival: 0.0,
        departure: Some(100.0),
    }
}

#[test]
fn immigration_death_equilibria() {
    let uncapped = run_immigration_death(&BirthDeathConfig {
        rate: 1.0,
        cap: Capacity::Infinite,
        horizon: 20_000.0,
        warmup: 20.0,
        seed: 3,
    })
    .unwrap();
    assert_eq!(uncapped.blocked, 0);
    let (mean, se) = batch_mean_se(&uncapped.population_batches);
    assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");

    let capped = run_immigration_death(&BirthDeathConfig {
        rate: 1.0,
        cap: Capacity::Finite(2),
        horizon: 100_000.0,
        warmup: 20.0,
        seed: 3,
    })
    .unwrap();
    assert!(capped.attempts >= 90_000);
    let target = erlang_b(2, 1.0).unwrap();
    let (_, se) = batch_mean_se(&capped.blocking_batches);
    assert!((capped.blocking_fraction() - target).abs() <= 3.0 * se);
    for (got, want) in capped.histogram.iter().zip([0.4, 0.4, 0.2]) {
        assert!((got - want).abs() < 0.01, "{:?}", capped.histogram);
    }
}
