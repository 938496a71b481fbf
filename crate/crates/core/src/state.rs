//! Network state: directed link loads, the active-call table and the
//! saturation observables derived from them.
//!
//! A call between `u` and `v` routed via `w` occupies the two directed links
//! `u -> w` and `v -> w`. The link `v -> w` is identified by
//! [`LinkId { endpoint: v, via: w }`](LinkId); `v -> w` and `w -> v` are
//! different resources.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Per-link capacity `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Capacity {
    Finite(u32),
    Infinite,
}

impl Capacity {
    #[inline]
    pub fn admits(self, load: u32) -> bool {
        match self {
            Capacity::Finite(d) => load < d,
            Capacity::Infinite => true,
        }
    }

    #[inline]
    pub fn is_full(self, load: u32) -> bool {
        match self {
            Capacity::Finite(d) => load >= d,
            Capacity::Infinite => false,
        }
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Capacity::Finite(d) => Some(d),
            Capacity::Infinite => None,
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Finite(d) => write!(f, "{d}"),
            Capacity::Infinite => f.write_str("infinite"),
        }
    }
}

impl Serialize for Capacity {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        match self {
            Capacity::Finite(d) => serializer.serialize_u32(*d),
            Capacity::Infinite => serializer.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Str(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Int(d) if d >= 1 && d <= u32::MAX as u64 => Ok(Capacity::Finite(d as u32)),
            Repr::Int(d) => Err(serde::de::Error::custom(format!(
                "capacity must be at least 1, got {d}"
            ))),
            Repr::Str(s) if s.eq_ignore_ascii_case("infinite") || s.eq_ignore_ascii_case("inf") => {
                Ok(Capacity::Infinite)
            }
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "capacity must be a positive integer or \"infinite\", got {s:?}"
            ))),
        }
    }
}

/// Directed link `endpoint -> via`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId {
    pub endpoint: u32,
    pub via: u32,
}

impl LinkId {
    pub fn new(endpoint: u32, via: u32) -> Self {
        Self { endpoint, via }
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.endpoint, self.via)
    }
}

/// Dense `n x n` load matrix with incrementally maintained saturation
/// counters and a count of links at each load level.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkLoads {
    n: usize,
    capacity: Capacity,
    loads: Vec<u32>,
    sat_at: Vec<u32>,
    sat_via: Vec<u32>,
    /// `level_counts[k]` = number of directed links carrying load `k`.
    level_counts: Vec<u64>,
    total_load: u64,
}

impl LinkLoads {
    pub fn new(n: usize, capacity: Capacity) -> Self {
        let mut level_counts = match capacity {
            Capacity::Finite(d) => vec![0; d as usize + 1],
            Capacity::Infinite => vec![0; 1],
        };
        level_counts[0] = (n * n.saturating_sub(1)) as u64;
        Self {
            n,
            capacity,
            loads: vec![0; n * n],
            sat_at: vec![0; n],
            sat_via: vec![0; n],
            level_counts,
            total_load: 0,
        }
    }

    /// Builds a load matrix from explicit `(link, load)` entries. Links not
    /// listed carry zero load.
    pub fn from_entries<I>(n: usize, capacity: Capacity, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (LinkId, u32)>,
    {
        let mut loads = Self::new(n, capacity);
        for (link, load) in entries {
            loads.check_link(link)?;
            for _ in 0..load {
                loads.increment(link)?;
            }
        }
        Ok(loads)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    #[inline]
    fn index(&self, endpoint: u32, via: u32) -> usize {
        endpoint as usize * self.n + via as usize
    }

    fn check_link(&self, link: LinkId) -> Result<()> {
        if link.endpoint == link.via
            || link.endpoint as usize >= self.n
            || link.via as usize >= self.n
        {
            return Err(Error::BadCall(format!("invalid link {link} for n = {}", self.n)));
        }
        Ok(())
    }

    #[inline]
    pub fn load(&self, endpoint: u32, via: u32) -> u32 {
        self.loads[self.index(endpoint, via)]
    }

    #[inline]
    pub fn get(&self, link: LinkId) -> u32 {
        self.load(link.endpoint, link.via)
    }

    #[inline]
    pub fn is_saturated(&self, endpoint: u32, via: u32) -> bool {
        self.capacity.is_full(self.load(endpoint, via))
    }

    /// Both legs `u -> w` and `v -> w` have spare capacity.
    #[inline]
    pub fn route_feasible(&self, u: u32, v: u32, w: u32) -> bool {
        self.capacity.admits(self.load(u, w)) && self.capacity.admits(self.load(v, w))
    }

    pub fn increment(&mut self, link: LinkId) -> Result<()> {
        let idx = self.index(link.endpoint, link.via);
        let old = self.loads[idx];
        if !self.capacity.admits(old) {
            return Err(Error::CapacityViolation(link));
        }
        let new = old + 1;
        self.loads[idx] = new;
        self.total_load += 1;
        self.level_counts[old as usize] -= 1;
        if new as usize == self.level_counts.len() {
            self.level_counts.push(0);
        }
        self.level_counts[new as usize] += 1;
        if self.capacity.is_full(new) {
            self.sat_at[link.endpoint as usize] += 1;
            self.sat_via[link.via as usize] += 1;
        }
        Ok(())
    }

    /// Panics if the link is already empty; callers only release what they
    /// previously acquired.
    pub fn decrement(&mut self, link: LinkId) {
        let idx = self.index(link.endpoint, link.via);
        let old = self.loads[idx];
        assert!(old > 0, "decrement of empty link {link}");
        if self.capacity.is_full(old) {
            self.sat_at[link.endpoint as usize] -= 1;
            self.sat_via[link.via as usize] -= 1;
        }
        let new = old - 1;
        self.loads[idx] = new;
        self.total_load -= 1;
        self.level_counts[old as usize] -= 1;
        self.level_counts[new as usize] += 1;
    }

    /// Number of saturated links `v -> w` over all `w`.
    #[inline]
    pub fn sat_at(&self, v: u32) -> u32 {
        self.sat_at[v as usize]
    }

    /// Number of saturated links `u -> w` over all `u`.
    #[inline]
    pub fn sat_via(&self, w: u32) -> u32 {
        self.sat_via[w as usize]
    }

    pub fn sat_at_all(&self) -> &[u32] {
        &self.sat_at
    }

    pub fn sat_via_all(&self) -> &[u32] {
        &self.sat_via
    }

    pub fn max_sat(&self) -> u32 {
        self.sat_at.iter().copied().max().unwrap_or(0)
    }

    pub fn level_counts(&self) -> &[u64] {
        &self.level_counts
    }

    pub fn total_load(&self) -> u64 {
        self.total_load
    }

    /// Raw row-major matrix; diagonal entries are always zero.
    pub fn as_matrix(&self) -> &[u32] {
        &self.loads
    }

    /// Every off-diagonal link with its load.
    pub fn iter(&self) -> impl Iterator<Item = (LinkId, u32)> + '_ {
        let n = self.n as u32;
        (0..n).flat_map(move |a| {
            (0..n)
                .filter(move |&b| b != a)
                .map(move |b| (LinkId::new(a, b), self.load(a, b)))
        })
    }

    /// Recomputes `(sat_at, sat_via)` by scanning every link.
    pub fn recount_saturation(&self) -> (Vec<u32>, Vec<u32>) {
        let mut at = vec![0; self.n];
        let mut via = vec![0; self.n];
        for (link, load) in self.iter() {
            if self.capacity.is_full(load) {
                at[link.endpoint as usize] += 1;
                via[link.via as usize] += 1;
            }
        }
        (at, via)
    }
}

/// One call. Blocked calls have `chosen == None` and no departure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub id: u64,
    pub u: u32,
    pub v: u32,
    pub candidates: Vec<u32>,
    pub chosen: Option<usize>,
    pub arrival: f64,
    pub departure: Option<f64>,
}

impl CallRecord {
    /// Intermediate node of the chosen route.
    pub fn via(&self) -> Option<u32> {
        self.chosen.map(|i| self.candidates[i])
    }

    /// The two links the call occupies.
    pub fn route(&self) -> Option<[LinkId; 2]> {
        self.via()
            .map(|w| [LinkId::new(self.u, w), LinkId::new(self.v, w)])
    }

    fn validate(&self, n: usize) -> Result<()> {
        let n32 = n as u32;
        if self.u == self.v || self.u >= n32 || self.v >= n32 {
            return Err(Error::BadCall(format!(
                "call {} has invalid endpoints ({}, {})",
                self.id, self.u, self.v
            )));
        }
        if let Some(&w) = self
            .candidates
            .iter()
            .find(|&&w| w == self.u || w == self.v || w >= n32)
        {
            return Err(Error::BadCall(format!(
                "call {} has candidate {w} equal to an endpoint or out of range",
                self.id
            )));
        }
        match (self.chosen, self.departure) {
            (Some(i), _) if i >= self.candidates.len() => Err(Error::BadCall(format!(
                "call {} chose index {i} of {} candidates",
                self.id,
                self.candidates.len()
            ))),
            (Some(_), Some(dep)) if dep > self.arrival => Ok(()),
            (Some(_), _) => Err(Error::BadCall(format!(
                "call {} is routed but does not depart after it arrives",
                self.id
            ))),
            (None, _) => Err(Error::BadCall(format!(
                "call {} is blocked and cannot be active",
                self.id
            ))),
        }
    }
}

/// Instantaneous observables: `X_t(v)`, saturated links at and via each
/// node, `|X_t|` and `max_v sat_at(v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub node_load: Vec<u32>,
    pub sat_at: Vec<u32>,
    pub sat_via: Vec<u32>,
    pub total_calls: u64,
    pub max_sat: u32,
}

/// Link loads plus the table of calls currently in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    links: LinkLoads,
    calls: BTreeMap<u64, CallRecord>,
    node_load: Vec<u32>,
    pub clock: f64,
}

impl NetworkState {
    pub fn new(n: usize, capacity: Capacity, initial: &[CallRecord]) -> Result<Self> {
        if n < 4 {
            return Err(Error::Config(format!("n must be at least 4, got {n}")));
        }
        if capacity == Capacity::Finite(0) {
            return Err(Error::Config("capacity must be at least 1".into()));
        }
        let mut state = Self {
            links: LinkLoads::new(n, capacity),
            calls: BTreeMap::new(),
            node_load: vec![0; n],
            clock: 0.0,
        };
        for call in initial {
            call.validate(n)?;
            state.apply_arrival(call.clone())?;
        }
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.links.n()
    }

    pub fn capacity(&self) -> Capacity {
        self.links.capacity()
    }

    pub fn links(&self) -> &LinkLoads {
        &self.links
    }

    pub fn load(&self, link: LinkId) -> u32 {
        self.links.get(link)
    }

    pub fn route_feasible(&self, u: u32, v: u32, w: u32) -> bool {
        self.links.route_feasible(u, v, w)
    }

    pub fn calls(&self) -> impl Iterator<Item = &CallRecord> {
        self.calls.values()
    }

    pub fn call(&self, id: u64) -> Option<&CallRecord> {
        self.calls.get(&id)
    }

    pub fn total_calls(&self) -> u64 {
        self.calls.len() as u64
    }

    pub fn node_load(&self) -> &[u32] {
        &self.node_load
    }

    /// Routes `call` on its chosen candidate. Leaves the state untouched on
    /// error.
    pub fn apply_arrival(&mut self, call: CallRecord) -> Result<()> {
        let [first, second] = call
            .route()
            .ok_or_else(|| Error::BadCall(format!("call {} has no chosen route", call.id)))?;
        if self.calls.contains_key(&call.id) {
            return Err(Error::BadCall(format!("call {} is already active", call.id)));
        }
        if !self.links.capacity().admits(self.links.get(first)) {
            return Err(Error::CapacityViolation(first));
        }
        if !self.links.capacity().admits(self.links.get(second)) {
            return Err(Error::CapacityViolation(second));
        }
        self.links.increment(first)?;
        self.links.increment(second)?;
        self.node_load[call.u as usize] += 1;
        self.node_load[call.v as usize] += 1;
        self.calls.insert(call.id, call);
        Ok(())
    }

    pub fn apply_departure(&mut self, id: u64) -> Result<CallRecord> {
        let call = self.calls.remove(&id).ok_or(Error::UnknownCall(id))?;
        if let Some(route) = call.route() {
            for link in route {
                self.links.decrement(link);
            }
        }
        self.node_load[call.u as usize] -= 1;
        self.node_load[call.v as usize] -= 1;
        Ok(call)
    }

    pub fn observables(&self) -> Observables {
        Observables {
            node_load: self.node_load.clone(),
            sat_at: self.links.sat_at_all().to_vec(),
            sat_via: self.links.sat_via_all().to_vec(),
            total_calls: self.total_calls(),
            max_sat: self.links.max_sat(),
        }
    }

    /// Recomputes every observable from the call table and a full link scan,
    /// ignoring the incremental counters.
    pub fn observables_brute_force(&self) -> Observables {
        let mut node_load = vec![0; self.n()];
        for call in self.calls.values() {
            node_load[call.u as usize] += 1;
            node_load[call.v as usize] += 1;
        }
        let (sat_at, sat_via) = self.links.recount_saturation();
        let max_sat = sat_at.iter().copied().max().unwrap_or(0);
        Observables {
            node_load,
            sat_at,
            sat_via,
            total_calls: self.calls.len() as u64,
            max_sat,
        }
    }

    /// Number of active calls between `{u, v}` routed via `w`.
    pub fn calls_on(&self, u: u32, v: u32, w: u32) -> usize {
        self.calls
            .values()
            .filter(|c| ((c.u == u && c.v == v) || (c.u == v && c.v == u)) && c.via() == Some(w))
            .count()
    }

    /// Checks conservation, capacity and that every active call's route links
    /// are loaded. Returns a description of the first failure.
    pub fn check_invariants(&self) -> core::result::Result<(), alloc::string::String> {
        let mut sum = 0u64;
        for (link, load) in self.links.iter() {
            if load > self.capacity().finite().unwrap_or(u32::MAX) {
                return Err(format!("link {link} load {load} exceeds capacity"));
            }
            sum += load as u64;
        }
        if sum != 2 * self.total_calls() || sum != self.links.total_load() {
            return Err(format!(
                "conservation: sum of loads {sum} != 2 x {} calls",
                self.total_calls()
            ));
        }
        for call in self.calls.values() {
            for link in call.route().into_iter().flatten() {
                if self.links.get(link) == 0 {
                    return Err(format!("call {} uses empty link {link}", call.id));
                }
            }
        }
        Ok(())
    }
}
