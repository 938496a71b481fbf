//! Verification suites shared by the `verify` subcommand and the acceptance
//! tests. Each suite returns an outcome with a pass flag and named figures.

use std::collections::HashMap;
use std::fmt;

use darsim_core::analytics::{blocking_bounds_hold, erlang_b};
use darsim_core::engine::{
    run_coupled, run_immigration_death, run_simulation_with, BirthDeathConfig, EventKind,
    EventView, SimConfig, SimMode, TraceEvent,
};
use darsim_core::metrics::batch_mean_se;
use darsim_core::rng::replication_seed;
use darsim_core::{Capacity, CallRecord, LinkLoads, NetworkState, PolicyKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub suite: &'static str,
    pub passed: bool,
    pub figures: Vec<(String, String)>,
}

impl Outcome {
    fn new(suite: &'static str) -> Self {
        Outcome { suite, passed: true, figures: Vec::new() }
    }

    fn note(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.figures.push((key.into(), value.to_string()));
    }

    pub fn figure(&self, key: &str) -> Option<&str> {
        self.figures.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite: {}", self.suite)?;
        for (k, v) in &self.figures {
            writeln!(f, "{k}: {v}")?;
        }
        write!(f, "result: {}", if self.passed { "pass" } else { "FAIL" })
    }
}

#[derive(Debug, Clone)]
pub struct CouplingParams {
    pub n: usize,
    pub lambda: f64,
    pub capacity: Capacity,
    pub d: usize,
    pub events: u64,
    pub seed: u64,
    pub policies: Vec<PolicyKind>,
}

impl Default for CouplingParams {
    fn default() -> Self {
        CouplingParams {
            n: 10,
            lambda: 2.0,
            capacity: Capacity::Finite(1),
            d: 2,
            events: 100_000,
            seed: 1,
            policies: PolicyKind::ALL.to_vec(),
        }
    }
}

/// Capacitated process against the superprocess on common random numbers.
pub fn coupling(p: &CouplingParams) -> Result<Outcome, darsim_core::Error> {
    let mut out = Outcome::new("coupling");
    for &policy in &p.policies {
        let config = SimConfig {
            mode: SimMode::Coupled,
            warmup: 0.0,
            max_events: Some(p.events),
            ..SimConfig::new(p.n, p.lambda, p.d, p.capacity, policy, f64::MAX, p.seed)
        };
        let r = run_coupled(&config)?;
        out.note(format!("{policy}.events"), r.event_count);
        out.note(format!("{policy}.blocked"), r.capacitated.blocked);
        out.note(format!("{policy}.violations"), r.violations);
        if let Some((t, link)) = r.first_violation {
            out.note(format!("{policy}.first_violation"), format!("{link} at t={t}"));
        }
        out.passed &= r.violations == 0 && r.event_count == p.events;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BoundsParams {
    pub states: usize,
    pub seed: u64,
    /// Events per short run; each run contributes its final state.
    pub events: u64,
}

impl Default for BoundsParams {
    fn default() -> Self {
        BoundsParams { states: 1000, seed: 1, events: 400 }
    }
}

/// Names of the audited inequalities, in report order.
pub const BOUND_CHECKS: [&str; 4] =
    ["lb_min<=lb_sum", "lb_sum<=exact", "exact<=ub_sum", "exact<=ub_max"];

/// Blocking-bound audit over states reached by short capacitated runs with
/// `n` in {6, 8, 10}, `D` in {1, 2, 3} and `d` in {1, 2, 3}, plus an
/// exhaustive check of the exact probability on states with `n <= 8`.
pub fn bounds(p: &BoundsParams) -> Result<Outcome, darsim_core::Error> {
    let mut out = Outcome::new("bounds");
    let mut violations = [0u64; 4];
    let mut first: [Option<String>; 4] = Default::default();
    let mut brute_checked = 0u64;
    let mut brute_max_err = 0.0f64;
    for k in 0..p.states {
        let n = [6, 8, 10][k % 3];
        let cap = 1 + (k / 3 % 3) as u32;
        let d = 1 + (k / 9 % 3);
        let policy = PolicyKind::ALL[k / 27 % 3];
        let seed = replication_seed(p.seed, k as u64);
        let links = final_loads(n, cap, d, policy, seed, p.events)?;
        let check = blocking_bounds_hold(&links, d as u32)?;
        let b = check.bounds;
        let tol = |x: f64| 1e-12 * x.abs().max(1.0);
        let ok = [
            b.lb_min <= b.lb_sum + tol(b.lb_sum),
            b.lb_sum <= b.exact + tol(b.exact),
            b.exact <= b.ub_sum + tol(b.ub_sum),
            b.exact <= b.ub_max + tol(b.ub_max),
        ];
        for (i, holds) in ok.iter().enumerate() {
            if !holds {
                violations[i] += 1;
                first[i].get_or_insert_with(|| {
                    format!(
                        "n={n} D={cap} d={d} seed={seed}: lb_min={} lb_sum={} exact={} ub_sum={} ub_max={}",
                        b.lb_min, b.lb_sum, b.exact, b.ub_sum, b.ub_max
                    )
                });
            }
        }
        if n <= 8 {
            for dd in 1..=3u32 {
                let exact = darsim_core::analytics::exact_failure_probability(&links, dd)?.exact;
                let err = (exact - brute_force_failure(&links, dd)).abs();
                brute_max_err = brute_max_err.max(err);
                brute_checked += 1;
            }
        }
    }
    out.note("states", p.states);
    for (i, name) in BOUND_CHECKS.iter().enumerate() {
        out.note(format!("violations[{name}]"), violations[i]);
        if let Some(s) = &first[i] {
            out.note(format!("first[{name}]"), s);
        }
    }
    out.note("brute_force_checks", brute_checked);
    out.note("brute_force_max_error", brute_max_err);
    out.passed = violations.iter().all(|&v| v == 0) && brute_max_err <= 1e-12;
    Ok(out)
}

fn final_loads(
    n: usize,
    cap: u32,
    d: usize,
    policy: PolicyKind,
    seed: u64,
    events: u64,
) -> Result<LinkLoads, darsim_core::Error> {
    let config = SimConfig {
        warmup: 0.0,
        max_events: Some(events),
        ..SimConfig::new(n, 1.5, d, Capacity::Finite(cap), policy, f64::MAX, seed)
    };
    let mut last = LinkLoads::new(n, Capacity::Finite(cap));
    run_simulation_with(&config, &mut |_: &TraceEvent<'_>, v: &EventView<'_>| {
        last.clone_from(v.links)
    })?;
    Ok(last)
}

/// Blocking probability by enumerating every pair and every candidate
/// vector in `(V \ {u, v})^d`.
pub fn brute_force_failure(links: &LinkLoads, d: u32) -> f64 {
    let n = links.n() as u32;
    let mut total = 0.0;
    let mut pairs = 0u64;
    for u in 0..n {
        for v in u + 1..n {
            pairs += 1;
            let others: Vec<u32> = (0..n).filter(|&w| w != u && w != v).collect();
            let m = others.len();
            let outcomes = m.pow(d);
            let mut failing = 0u64;
            for code in 0..outcomes {
                let mut c = code;
                let mut blocked = true;
                for _ in 0..d {
                    if links.route_feasible(u, v, others[c % m]) {
                        blocked = false;
                        break;
                    }
                    c /= m;
                }
                failing += blocked as u64;
            }
            total += failing as f64 / outcomes as f64;
        }
    }
    total / pairs as f64
}

#[derive(Debug, Clone)]
pub struct ErlangParams {
    pub rate: f64,
    pub servers: u32,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for ErlangParams {
    fn default() -> Self {
        ErlangParams { rate: 1.0, servers: 2, horizon: 110_000.0, seed: 1 }
    }
}

/// Simulated immigration-death blocking against the Erlang B formula.
pub fn erlang(p: &ErlangParams) -> Result<Outcome, darsim_core::Error> {
    let mut out = Outcome::new("erlang");
    let stats = run_immigration_death(&BirthDeathConfig {
        rate: p.rate,
        cap: Capacity::Finite(p.servers),
        horizon: p.horizon,
        warmup: 10.0,
        seed: p.seed,
    })?;
    let target = erlang_b(p.servers, p.rate)?;
    let (_, se) = batch_mean_se(&stats.blocking_batches);
    let got = stats.blocking_fraction();
    out.note("attempts", stats.attempts);
    out.note("blocked", stats.blocked);
    out.note("blocking_fraction", got);
    out.note("erlang_b", target);
    out.note("standard_error", se);
    out.note("z", (got - target) / se);
    out.passed = (got - target).abs() <= 3.0 * se;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct InvariantParams {
    pub configs: usize,
    pub events: u64,
    pub seed: u64,
}

impl Default for InvariantParams {
    fn default() -> Self {
        InvariantParams { configs: 20, events: 1_000_000, seed: 1 }
    }
}

/// Random configuration number `index` for the invariant suite.
pub fn random_config(seed: u64, index: u64, events: u64) -> SimConfig {
    let mut bits = replication_seed(seed, index);
    let mut pick = |m: u64| {
        let r = bits % m;
        bits = replication_seed(bits, m);
        r
    };
    let n = 4 + pick(57) as usize;
    let lambda = 0.25 + pick(12) as f64 * 0.25;
    let d = 1 + pick(4) as usize;
    let capacity = match pick(8) {
        7 => Capacity::Infinite,
        c => Capacity::Finite(1 + c as u32),
    };
    let policy = PolicyKind::ALL[pick(3) as usize];
    SimConfig {
        warmup: 0.0,
        max_events: Some(events),
        ..SimConfig::new(n, lambda, d, capacity, policy, f64::MAX, bits)
    }
}

/// Independent bookkeeping of every call and link, compared with the
/// engine's state after each event.
pub struct Auditor {
    n: usize,
    capacity: Capacity,
    shadow: Vec<u32>,
    routes: HashMap<u64, (u32, u32, u32)>,
    last_time: f64,
    events: u64,
    full_every: u64,
    next_id: u64,
    pub violations: u64,
    pub first: Option<String>,
}

impl Auditor {
    pub fn new(n: usize, capacity: Capacity) -> Self {
        Auditor {
            n,
            capacity,
            shadow: vec![0; n * n],
            routes: HashMap::new(),
            last_time: 0.0,
            events: 0,
            full_every: 25_000,
            next_id: u64::MAX,
            violations: 0,
            first: None,
        }
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    fn fail(&mut self, t: f64, what: impl FnOnce() -> String) {
        self.violations += 1;
        if self.first.is_none() {
            self.first = Some(format!("t={t}: {}", what()));
        }
    }

    fn check_link(&mut self, t: f64, links: &LinkLoads, a: u32, b: u32) {
        let got = links.load(a, b);
        let want = self.shadow[a as usize * self.n + b as usize];
        if got != want {
            self.fail(t, || format!("load {a}->{b} is {got}, bookkeeping says {want}"));
        }
        if self.capacity.finite().is_some_and(|c| got > c) {
            self.fail(t, || format!("load {a}->{b} = {got} exceeds capacity"));
        }
    }

    fn full_check(&mut self, t: f64, links: &LinkLoads, network: Option<&NetworkState>) {
        if links.as_matrix() != self.shadow.as_slice() {
            self.fail(t, || "load matrix differs from bookkeeping".into());
        }
        let Some(net) = network else { return };
        if let Err(e) = net.check_invariants() {
            self.fail(t, || format!("state invariant: {e}"));
        }
        if net.total_calls() != self.routes.len() as u64 {
            self.fail(t, || "call count differs from bookkeeping".into());
        }
        // Reversibility: a feasible arrival followed by its departure
        // restores the state exactly.
        let n = self.n as u32;
        let route = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .flat_map(|(u, v)| (0..n).map(move |w| (u, v, w)))
            .find(|&(u, v, w)| w != u && w != v && net.route_feasible(u, v, w));
        if let Some((u, v, w)) = route {
            let mut probe = net.clone();
            let call = CallRecord {
                id: self.next_id,
                u,
                v,
                candidates: vec![w],
                chosen: Some(0),
                arrival: t,
                departure: None,
            };
            self.next_id -= 1;
            let reversed = probe.apply_arrival(call).is_ok()
                && probe.apply_departure(self.next_id + 1).is_ok()
                && probe.links() == net.links()
                && probe.node_load() == net.node_load();
            if !reversed {
                self.fail(t, || format!("arrival/departure of {u}-{v} via {w} not reversible"));
            }
        }
    }
}

impl darsim_core::engine::EventObserver for Auditor {
    fn on_event(&mut self, e: &TraceEvent<'_>, view: &EventView<'_>) {
        let t = e.time;
        self.events += 1;
        if !(t >= self.last_time) {
            let last = self.last_time;
            self.fail(t, || format!("time went backwards from {last}"));
        }
        self.last_time = t;
        let links = view.links;
        match e.kind {
            EventKind::ArriveAccept => {
                let Some(w) = e.chosen.and_then(|i| e.candidates.get(i).copied()) else {
                    self.fail(t, || format!("accepted call {} has no route", e.call_id));
                    return;
                };
                self.shadow[e.u as usize * self.n + w as usize] += 1;
                self.shadow[e.v as usize * self.n + w as usize] += 1;
                self.routes.insert(e.call_id, (e.u, e.v, w));
                self.check_link(t, links, e.u, w);
                self.check_link(t, links, e.v, w);
            }
            EventKind::ArriveBlock => {
                if e.candidates.iter().any(|&w| links.route_feasible(e.u, e.v, w)) {
                    self.fail(t, || format!("call {} blocked with a feasible candidate", e.call_id));
                }
            }
            EventKind::Depart => match self.routes.remove(&e.call_id) {
                Some((u, v, w)) => {
                    for a in [u, v] {
                        let cell = &mut self.shadow[a as usize * self.n + w as usize];
                        if *cell == 0 {
                            self.fail(t, || format!("departure of {} underflows", e.call_id));
                            return;
                        }
                        *cell -= 1;
                    }
                    self.check_link(t, links, u, w);
                    self.check_link(t, links, v, w);
                }
                None => self.fail(t, || format!("departure of unknown call {}", e.call_id)),
            },
        }
        // Conservation: every call holds exactly two links.
        if links.total_load() != 2 * self.routes.len() as u64 {
            let total = links.total_load();
            let calls = self.routes.len();
            self.fail(t, || format!("total load {total} != 2 x {calls} calls"));
        }
        if self.events.is_multiple_of(self.full_every) {
            self.full_check(t, links, view.network);
        }
    }
}

/// Audited runs over random configurations.
pub fn invariants(p: &InvariantParams) -> Result<Outcome, darsim_core::Error> {
    let mut out = Outcome::new("invariants");
    let mut total_events = 0;
    let mut total_violations = 0;
    for i in 0..p.configs {
        let config = random_config(p.seed, i as u64, p.events);
        let mut auditor = Auditor::new(config.n, config.capacity);
        let r = run_simulation_with(&config, &mut auditor)?;
        let label = format!(
            "config[{i}]",
        );
        out.note(
            label.clone(),
            format!(
                "n={} lambda={} d={} D={} policy={} events={} violations={}",
                config.n, config.lambda, config.d, config.capacity, config.policy, r.event_count, auditor.violations
            ),
        );
        if let Some(s) = &auditor.first {
            out.note(format!("{label}.first"), s);
        }
        total_events += auditor.events();
        total_violations += auditor.violations;
        out.passed &= auditor.violations == 0 && r.event_count == p.events;
    }
    out.note("events", total_events);
    out.note("violations", total_violations);
    Ok(out)
}
