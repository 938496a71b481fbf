//! Event-driven simulation.
//!
//! Calls arrive as a single Poisson stream of rate `lambda * C(n, 2)` with a
//! uniformly random edge `{u, v}` attached to each arrival. Holding times are
//! unit-mean exponentials. Four processes share this arrival machinery:
//!
//! * the capacitated network under a routing policy ([`run_simulation`]),
//! * the infinite-capacity superprocess where each call holds all of its
//!   sampled routes ([`run_superprocess`]),
//! * both of the above driven by identical draws, with a per-event
//!   domination check ([`run_coupled`]),
//! * a single immigration-death chain ([`run_immigration_death`]).

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{split_into_batches, Collector, MetricsReport, ReportSetup, StateView, BATCHES};
use crate::policy::{sample_intermediate, PolicyKind};
use crate::rng::{exponential, RngStreams};
use crate::state::{Capacity, CallRecord, LinkId, LinkLoads, NetworkState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Capacitated,
    Superprocess,
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Arrival rate per unordered pair.
    pub lambda: f64,
    pub d: usize,
    pub capacity: Capacity,
    pub policy: PolicyKind,
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    /// Snapshot spacing; `0` disables snapshots.
    pub snapshot_every: f64,
    pub full_snapshots: bool,
    pub initial_calls: Vec<CallRecord>,
    pub mode: SimMode,
    /// Stop after this many events even if the horizon is not reached.
    pub max_events: Option<u64>,
    /// Check state invariants after every event.
    pub audit: bool,
}

impl SimConfig {
    /// Capacitated run with an empty start, warmup `10 ln n` and no
    /// snapshots.
    pub fn new(
        n: usize,
        lambda: f64,
        d: usize,
        capacity: Capacity,
        policy: PolicyKind,
        horizon: f64,
        seed: u64,
    ) -> Self {
        Self {
            n,
            lambda,
            d,
            capacity,
            policy,
            horizon,
            warmup: default_warmup(n),
            seed,
            snapshot_every: 0.0,
            full_snapshots: false,
            initial_calls: Vec::new(),
            mode: SimMode::Capacitated,
            max_events: None,
            audit: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.n < 4 {
            return fail("n >= 4");
        }
        if self.n > u32::MAX as usize / 2 {
            return fail("n too large");
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return fail("lambda > 0");
        }
        if self.d < 1 {
            return fail("d >= 1");
        }
        if self.capacity == Capacity::Finite(0) {
            return fail("capacity >= 1");
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return fail("horizon >= 0");
        }
        if !(self.warmup >= 0.0) {
            return fail("warmup >= 0");
        }
        let degenerate = self.horizon == 0.0 && self.warmup == 0.0;
        if !(self.warmup < self.horizon || degenerate) {
            return fail("warmup < horizon");
        }
        if !(self.snapshot_every >= 0.0) || !self.snapshot_every.is_finite() {
            return fail("snapshot_every >= 0");
        }
        if self.mode == SimMode::Coupled && !self.initial_calls.is_empty() {
            return fail("coupled runs start empty");
        }
        Ok(())
    }

    fn setup(&self) -> ReportSetup {
        ReportSetup { n: self.n, capacity: self.capacity, policy: self.policy, d: self.d }
    }

    fn pairs(&self) -> f64 {
        (self.n * (self.n - 1) / 2) as f64
    }
}

/// `10 ln n`.
pub fn default_warmup(n: usize) -> f64 {
    10.0 * libm::log(n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "arrive-accept")]
    ArriveAccept,
    #[serde(rename = "arrive-block")]
    ArriveBlock,
    #[serde(rename = "depart")]
    Depart,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::ArriveAccept => "arrive-accept",
            EventKind::ArriveBlock => "arrive-block",
            EventKind::Depart => "depart",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceEvent<'a> {
    pub time: f64,
    pub kind: EventKind,
    pub call_id: u64,
    pub u: u32,
    pub v: u32,
    pub candidates: &'a [u32],
    pub chosen: Option<usize>,
}

/// What an observer sees after an event has been applied.
pub struct EventView<'a> {
    pub links: &'a LinkLoads,
    /// Present for the capacitated process.
    pub network: Option<&'a NetworkState>,
}

pub trait EventObserver {
    fn on_event(&mut self, event: &TraceEvent<'_>, view: &EventView<'_>);
}

/// Observer that ignores everything.
pub struct NoObserver;

impl EventObserver for NoObserver {
    #[inline]
    fn on_event(&mut self, _: &TraceEvent<'_>, _: &EventView<'_>) {}
}

impl<F: FnMut(&TraceEvent<'_>, &EventView<'_>)> EventObserver for F {
    fn on_event(&mut self, event: &TraceEvent<'_>, view: &EventView<'_>) {
        self(event, view)
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    id: u64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.id.cmp(&other.id))
    }
}

/// Pending departures, earliest first; equal times resolve by call id.
#[derive(Debug, Default)]
pub struct DepartureQueue {
    heap: BinaryHeap<Reverse<Pending>>,
}

impl DepartureQueue {
    pub fn push(&mut self, time: f64, id: u64) {
        self.heap.push(Reverse(Pending { time, id }));
    }

    pub fn peek_time(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |p| p.0.time)
    }

    pub fn pop(&mut self) -> Option<(f64, u64)> {
        self.heap.pop().map(|Reverse(p)| (p.time, p.id))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub clock: f64,
    pub total_calls: u64,
    pub total_load: u64,
    pub saturated_links: u64,
    pub max_sat: u32,
    /// Row-major `n x n` load matrix.
    pub loads: Vec<u32>,
}

impl StateSummary {
    fn of(links: &LinkLoads, total_calls: u64, clock: f64) -> Self {
        Self {
            clock,
            total_calls,
            total_load: links.total_load(),
            saturated_links: links.sat_at_all().iter().map(|&s| s as u64).sum(),
            max_sat: links.max_sat(),
            loads: links.as_matrix().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub metrics: MetricsReport,
    pub final_state: StateSummary,
    pub event_count: u64,
    /// Time-average number of calls in each of [`BATCHES`] equal slices of
    /// the measurement window.
    pub total_calls_batches: Vec<f64>,
    /// True when `max_events` stopped the run before the horizon.
    pub truncated: bool,
    /// Filled in by callers that measure it.
    pub wall_time: Option<f64>,
}

/// One arrival's random ingredients.
struct ArrivalDraw {
    u: u32,
    v: u32,
    candidates: Vec<u32>,
    duration: f64,
}

struct Arrivals {
    streams: RngStreams,
    rate: f64,
    n: u32,
    d: usize,
}

impl Arrivals {
    fn new(config: &SimConfig) -> Self {
        Self {
            streams: RngStreams::new(config.seed),
            rate: config.lambda * config.pairs(),
            n: config.n as u32,
            d: config.d,
        }
    }

    fn gap(&mut self) -> f64 {
        exponential(&mut self.streams.arrivals, self.rate)
    }

    fn draw(&mut self) -> ArrivalDraw {
        let s = &mut self.streams;
        let a = s.endpoints.random_range(0..self.n);
        let mut b = s.endpoints.random_range(0..self.n - 1);
        if b >= a {
            b += 1;
        }
        let (u, v) = if a < b { (a, b) } else { (b, a) };
        let candidates = (0..self.d)
            .map(|_| sample_intermediate(&mut s.choices, self.n, u, v))
            .collect();
        let duration = exponential(&mut s.durations, 1.0);
        ArrivalDraw { u, v, candidates, duration }
    }
}

fn next_call_id(initial: &[CallRecord]) -> u64 {
    initial.iter().map(|c| c.id + 1).max().unwrap_or(1).max(1)
}

fn audit_state(state: &NetworkState) -> Result<()> {
    state
        .check_invariants()
        .map_err(|msg| Error::Config(format!("state invariant broken at t = {}: {msg}", state.clock)))?;
    if state.observables() != state.observables_brute_force() {
        return Err(Error::Config(format!(
            "incremental observables diverged at t = {}",
            state.clock
        )));
    }
    Ok(())
}

/// Capacitated process under the configured policy.
pub fn run_simulation(config: &SimConfig) -> Result<RunResult> {
    run_simulation_with(config, &mut NoObserver)
}

pub fn run_simulation_with<O: EventObserver>(config: &SimConfig, observer: &mut O) -> Result<RunResult> {
    config.validate()?;
    if config.mode != SimMode::Capacitated {
        return Err(Error::Config(format!("run_simulation needs capacitated mode, got {:?}", config.mode)));
    }
    let mut state = NetworkState::new(config.n, config.capacity, &config.initial_calls)?;
    let mut queue = DepartureQueue::default();
    for call in &config.initial_calls {
        queue.push(call.departure.unwrap_or(f64::INFINITY), call.id);
    }
    let mut arrivals = Arrivals::new(config);
    let mut collector = Collector::new(
        config.setup(),
        config.warmup,
        config.horizon,
        config.snapshot_every,
        config.full_snapshots,
    );
    let mut next_id = next_call_id(&config.initial_calls);
    let mut next_arrival = arrivals.gap();
    let mut events = 0u64;
    let mut truncated = false;

    loop {
        if config.max_events.is_some_and(|m| events >= m) {
            truncated = true;
            break;
        }
        let departure = queue.peek_time();
        let is_arrival = next_arrival <= departure;
        let t = if is_arrival { next_arrival } else { departure };
        if t > config.horizon {
            break;
        }
        collector.advance(
            t,
            &StateView {
                links: state.links(),
                node_load: state.node_load(),
                total_calls: state.total_calls(),
                pair_counts: None,
            },
        );
        state.clock = t;
        if is_arrival {
            let draw = arrivals.draw();
            let chosen = config.policy.select(
                &mut arrivals.streams.choices,
                state.links(),
                draw.u,
                draw.v,
                &draw.candidates,
            );
            let id = next_id;
            next_id += 1;
            collector.record_arrival(t, chosen.is_some());
            let kind = if chosen.is_some() { EventKind::ArriveAccept } else { EventKind::ArriveBlock };
            let call = CallRecord {
                id,
                u: draw.u,
                v: draw.v,
                candidates: draw.candidates,
                chosen,
                arrival: t,
                departure: chosen.map(|_| t + draw.duration),
            };
            let blocked = match call.departure {
                Some(dep) => {
                    queue.push(dep, id);
                    state.apply_arrival(call)?;
                    None
                }
                None => Some(call),
            };
            let record = blocked.as_ref().or_else(|| state.call(id)).expect("call just recorded");
            let event = TraceEvent {
                time: t,
                kind,
                call_id: id,
                u: record.u,
                v: record.v,
                candidates: &record.candidates,
                chosen,
            };
            observer.on_event(&event, &EventView { links: state.links(), network: Some(&state) });
            next_arrival = t + arrivals.gap();
        } else {
            let (_, id) = queue.pop().expect("peeked departure");
            let call = state.apply_departure(id)?;
            let event = TraceEvent {
                time: t,
                kind: EventKind::Depart,
                call_id: id,
                u: call.u,
                v: call.v,
                candidates: &call.candidates,
                chosen: call.chosen,
            };
            observer.on_event(&event, &EventView { links: state.links(), network: Some(&state) });
        }
        events += 1;
        if config.audit {
            audit_state(&state)?;
        }
    }

    if truncated {
        collector.truncate_at_last();
    }
    let view = StateView {
        links: state.links(),
        node_load: state.node_load(),
        total_calls: state.total_calls(),
        pair_counts: None,
    };
    let (metrics, batches) = collector.finish(&view);
    Ok(RunResult {
        metrics,
        final_state: StateSummary::of(state.links(), state.total_calls(), state.clock),
        event_count: events,
        total_calls_batches: batches,
        truncated,
        wall_time: None,
    })
}

/// Infinite-capacity process in which every call holds all of its distinct
/// sampled routes.
#[derive(Debug, Clone)]
pub struct SuperState {
    n: usize,
    links: LinkLoads,
    node_load: Vec<u32>,
    pair_counts: Vec<u32>,
    calls: BTreeMap<u64, SuperCall>,
}

#[derive(Debug, Clone)]
struct SuperCall {
    u: u32,
    v: u32,
    vias: Vec<u32>,
}

impl SuperState {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            links: LinkLoads::new(n, Capacity::Infinite),
            node_load: vec![0; n],
            pair_counts: vec![0; n * (n - 1) / 2],
            calls: BTreeMap::new(),
        }
    }

    fn pair_index(&self, u: u32, v: u32) -> usize {
        let (a, b) = if u < v { (u as usize, v as usize) } else { (v as usize, u as usize) };
        a * self.n - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn links(&self) -> &LinkLoads {
        &self.links
    }

    pub fn total_calls(&self) -> u64 {
        self.calls.len() as u64
    }

    /// Calls in progress between each unordered pair, upper triangle
    /// row-major.
    pub fn pair_counts(&self) -> &[u32] {
        &self.pair_counts
    }

    pub fn pair_count(&self, u: u32, v: u32) -> u32 {
        self.pair_counts[self.pair_index(u, v)]
    }

    pub fn arrive(&mut self, id: u64, u: u32, v: u32, candidates: &[u32]) {
        let mut vias: Vec<u32> = candidates.to_vec();
        vias.sort_unstable();
        vias.dedup();
        for &w in &vias {
            self.links.increment(LinkId::new(u, w)).expect("infinite capacity");
            self.links.increment(LinkId::new(v, w)).expect("infinite capacity");
        }
        self.node_load[u as usize] += 1;
        self.node_load[v as usize] += 1;
        let idx = self.pair_index(u, v);
        self.pair_counts[idx] += 1;
        self.calls.insert(id, SuperCall { u, v, vias });
    }

    pub fn depart(&mut self, id: u64) -> Result<()> {
        let call = self.calls.remove(&id).ok_or(Error::UnknownCall(id))?;
        for &w in &call.vias {
            self.links.decrement(LinkId::new(call.u, w));
            self.links.decrement(LinkId::new(call.v, w));
        }
        self.node_load[call.u as usize] -= 1;
        self.node_load[call.v as usize] -= 1;
        let idx = self.pair_index(call.u, call.v);
        self.pair_counts[idx] -= 1;
        Ok(())
    }

    fn view(&self) -> StateView<'_> {
        StateView {
            links: &self.links,
            node_load: &self.node_load,
            total_calls: self.total_calls(),
            pair_counts: Some(&self.pair_counts),
        }
    }
}

pub fn run_superprocess(config: &SimConfig) -> Result<RunResult> {
    run_superprocess_with(config, &mut NoObserver)
}

pub fn run_superprocess_with<O: EventObserver>(config: &SimConfig, observer: &mut O) -> Result<RunResult> {
    config.validate()?;
    if config.mode != SimMode::Superprocess {
        return Err(Error::Config(format!("run_superprocess needs superprocess mode, got {:?}", config.mode)));
    }
    let mut state = SuperState::new(config.n);
    let mut queue = DepartureQueue::default();
    for call in &config.initial_calls {
        // Validates the record the same way the capacitated state does.
        NetworkState::new(config.n, Capacity::Infinite, core::slice::from_ref(call))?;
        state.arrive(call.id, call.u, call.v, &call.candidates);
        queue.push(call.departure.unwrap_or(f64::INFINITY), call.id);
    }
    let setup = ReportSetup { capacity: Capacity::Infinite, ..config.setup() };
    let mut collector = Collector::new(
        setup,
        config.warmup,
        config.horizon,
        config.snapshot_every,
        config.full_snapshots,
    );
    let mut arrivals = Arrivals::new(config);
    let mut next_id = next_call_id(&config.initial_calls);
    let mut next_arrival = arrivals.gap();
    let mut events = 0u64;
    let mut truncated = false;
    let mut clock = 0.0;

    loop {
        if config.max_events.is_some_and(|m| events >= m) {
            truncated = true;
            break;
        }
        let departure = queue.peek_time();
        let is_arrival = next_arrival <= departure;
        let t = if is_arrival { next_arrival } else { departure };
        if t > config.horizon {
            break;
        }
        collector.advance(t, &state.view());
        clock = t;
        if is_arrival {
            let draw = arrivals.draw();
            let id = next_id;
            next_id += 1;
            state.arrive(id, draw.u, draw.v, &draw.candidates);
            queue.push(t + draw.duration, id);
            collector.record_arrival(t, true);
            let event = TraceEvent {
                time: t,
                kind: EventKind::ArriveAccept,
                call_id: id,
                u: draw.u,
                v: draw.v,
                candidates: &draw.candidates,
                chosen: None,
            };
            observer.on_event(&event, &EventView { links: state.links(), network: None });
            next_arrival = t + arrivals.gap();
        } else {
            let (_, id) = queue.pop().expect("peeked departure");
            let (u, v) = state.calls.get(&id).map(|c| (c.u, c.v)).unwrap_or((0, 0));
            state.depart(id)?;
            let event = TraceEvent {
                time: t,
                kind: EventKind::Depart,
                call_id: id,
                u,
                v,
                candidates: &[],
                chosen: None,
            };
            observer.on_event(&event, &EventView { links: state.links(), network: None });
        }
        events += 1;
    }

    if truncated {
        collector.truncate_at_last();
    }
    let (metrics, batches) = collector.finish(&state.view());
    Ok(RunResult {
        metrics,
        final_state: StateSummary::of(state.links(), state.total_calls(), clock),
        event_count: events,
        total_calls_batches: batches,
        truncated,
        wall_time: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledResult {
    /// Events after which some link of the capacitated process carried more
    /// than the same link of the superprocess.
    pub violations: u64,
    pub first_violation: Option<(f64, LinkId)>,
    pub event_count: u64,
    pub capacitated: MetricsReport,
    pub superprocess: MetricsReport,
}

impl CoupledResult {
    pub fn ensure_dominated(&self) -> Result<()> {
        match self.first_violation {
            None => Ok(()),
            Some((time, link)) => Err(Error::DominationViolation { link, time }),
        }
    }
}

fn first_excess(cap: &LinkLoads, sup: &LinkLoads) -> Option<LinkId> {
    let n = cap.n();
    cap.as_matrix()
        .iter()
        .zip(sup.as_matrix())
        .position(|(c, s)| c > s)
        .map(|i| LinkId::new((i / n) as u32, (i % n) as u32))
}

/// Capacitated process and superprocess on common arrivals, edges,
/// candidates and holding times; checks `load_cap <= load_super` on every
/// link after every event.
pub fn run_coupled(config: &SimConfig) -> Result<CoupledResult> {
    config.validate()?;
    if config.mode != SimMode::Coupled {
        return Err(Error::Config(format!("run_coupled needs coupled mode, got {:?}", config.mode)));
    }
    let mut cap = NetworkState::new(config.n, config.capacity, &[])?;
    let mut sup = SuperState::new(config.n);
    let mut queue = DepartureQueue::default();
    let mut arrivals = Arrivals::new(config);
    let new_collector = |setup| {
        Collector::new(setup, config.warmup, config.horizon, config.snapshot_every, config.full_snapshots)
    };
    let mut cap_metrics = new_collector(config.setup());
    let mut sup_metrics = new_collector(ReportSetup { capacity: Capacity::Infinite, ..config.setup() });
    let mut next_id = 1u64;
    let mut next_arrival = arrivals.gap();
    let mut events = 0u64;
    let mut violations = 0u64;
    let mut first_violation = None;
    let mut truncated = false;

    loop {
        if config.max_events.is_some_and(|m| events >= m) {
            truncated = true;
            break;
        }
        let departure = queue.peek_time();
        let is_arrival = next_arrival <= departure;
        let t = if is_arrival { next_arrival } else { departure };
        if t > config.horizon {
            break;
        }
        cap_metrics.advance(
            t,
            &StateView {
                links: cap.links(),
                node_load: cap.node_load(),
                total_calls: cap.total_calls(),
                pair_counts: None,
            },
        );
        sup_metrics.advance(t, &sup.view());
        cap.clock = t;
        if is_arrival {
            let draw = arrivals.draw();
            let id = next_id;
            next_id += 1;
            let chosen = config.policy.select(
                &mut arrivals.streams.choices,
                cap.links(),
                draw.u,
                draw.v,
                &draw.candidates,
            );
            let departs = t + draw.duration;
            sup.arrive(id, draw.u, draw.v, &draw.candidates);
            queue.push(departs, id);
            cap_metrics.record_arrival(t, chosen.is_some());
            sup_metrics.record_arrival(t, true);
            if chosen.is_some() {
                cap.apply_arrival(CallRecord {
                    id,
                    u: draw.u,
                    v: draw.v,
                    candidates: draw.candidates,
                    chosen,
                    arrival: t,
                    departure: Some(departs),
                })?;
            }
            next_arrival = t + arrivals.gap();
        } else {
            let (_, id) = queue.pop().expect("peeked departure");
            sup.depart(id)?;
            if cap.call(id).is_some() {
                cap.apply_departure(id)?;
            }
        }
        events += 1;
        if let Some(link) = first_excess(cap.links(), sup.links()) {
            violations += 1;
            first_violation.get_or_insert((t, link));
        }
    }

    if truncated {
        cap_metrics.truncate_at_last();
        sup_metrics.truncate_at_last();
    }
    let (capacitated, _) = cap_metrics.finish(&StateView {
        links: cap.links(),
        node_load: cap.node_load(),
        total_calls: cap.total_calls(),
        pair_counts: None,
    });
    let (superprocess, _) = sup_metrics.finish(&sup.view());
    Ok(CoupledResult {
        violations,
        first_violation,
        event_count: events,
        capacitated,
        superprocess,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathConfig {
    /// Immigration rate.
    pub rate: f64,
    /// Population limit; births finding the population at the limit are lost.
    pub cap: Capacity,
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathStats {
    pub attempts: u64,
    pub blocked: u64,
    pub measured_time: f64,
    pub time_avg_population: f64,
    /// Fraction of measured time spent at each population size.
    pub histogram: Vec<f64>,
    /// Time-average population per batch.
    pub population_batches: Vec<f64>,
    /// Blocking fraction per batch (batches with no attempts are skipped).
    pub blocking_batches: Vec<f64>,
}

impl BirthDeathStats {
    pub fn blocking_fraction(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.blocked as f64 / self.attempts as f64
        }
    }
}

/// Single birth-death chain with constant birth rate and death rate equal
/// to the population, started empty.
pub fn run_immigration_death(config: &BirthDeathConfig) -> Result<BirthDeathStats> {
    let c = config;
    if !(c.rate > 0.0) || !c.rate.is_finite() {
        return Err(Error::Config("rate > 0".into()));
    }
    if c.cap == Capacity::Finite(0) {
        return Err(Error::Config("cap >= 1".into()));
    }
    if !(c.warmup >= 0.0 && c.warmup < c.horizon) || !c.horizon.is_finite() {
        return Err(Error::Config("0 <= warmup < horizon".into()));
    }
    let mut streams = RngStreams::new(c.seed);
    let batch_len = (c.horizon - c.warmup) / BATCHES as f64;
    let mut pop_batches = [0.0; BATCHES];
    let mut batch_attempts = [0u64; BATCHES];
    let mut batch_blocked = vec![0u64; BATCHES];
    let mut histogram: Vec<f64> = vec![0.0];
    let mut pop: u32 = 0;
    let mut t = 0.0;
    let mut attempts = 0;
    let mut blocked = 0;
    let batch_of = |x: f64| (((x - c.warmup) / batch_len) as usize).min(BATCHES - 1);

    loop {
        let total = c.rate + pop as f64;
        let next = t + exponential(&mut streams.arrivals, total);
        let end = next.min(c.horizon);
        // Integrate the constant population over [t, end] ∩ [warmup, horizon].
        let pop_now = pop;
        split_into_batches(c.warmup, batch_len, t.max(c.warmup), end, |b, dt| {
            pop_batches[b] += pop_now as f64 * dt;
            if pop_now as usize >= histogram.len() {
                histogram.resize(pop_now as usize + 1, 0.0);
            }
            histogram[pop_now as usize] += dt;
        });
        if next > c.horizon {
            break;
        }
        t = next;
        let birth = streams.choices.random::<f64>() * total < c.rate;
        if birth {
            let lost = !c.cap.admits(pop);
            if t >= c.warmup {
                attempts += 1;
                let b = batch_of(t);
                batch_attempts[b] += 1;
                if lost {
                    blocked += 1;
                    batch_blocked[b] += 1;
                }
            }
            if !lost {
                pop += 1;
            }
        } else {
            pop -= 1;
        }
    }

    let measured = c.horizon - c.warmup;
    let area: f64 = pop_batches.iter().sum();
    for h in &mut histogram {
        *h /= measured;
    }
    Ok(BirthDeathStats {
        attempts,
        blocked,
        measured_time: measured,
        time_avg_population: area / measured,
        histogram,
        population_batches: pop_batches.iter().map(|p| p / batch_len).collect(),
        blocking_batches: batch_attempts
            .iter()
            .zip(&batch_blocked)
            .filter(|(&a, _)| a > 0)
            .map(|(&a, &b)| b as f64 / a as f64)
            .collect(),
    })
}
