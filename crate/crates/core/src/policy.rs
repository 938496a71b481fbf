//! Candidate sampling and route selection.
//!
//! Every rule here accepts a call exactly when at least one sampled route has
//! spare capacity on both legs; they differ only in which feasible route
//! they take.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::state::LinkLoads;

/// Intermediate nodes `w_1, ..., w_d` in draw order. Repeats are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet(pub Vec<u32>);

impl CandidateSet {
    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    /// First feasible candidate in draw order.
    #[serde(rename = "fdar")]
    FirstFit,
    /// Feasible candidate minimising the larger of its two link loads.
    #[serde(rename = "bdar")]
    Balanced,
    /// Uniformly random feasible candidate.
    #[serde(rename = "uniform")]
    UniformFeasible,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::FirstFit,
        PolicyKind::Balanced,
        PolicyKind::UniformFeasible,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::FirstFit => "fdar",
            PolicyKind::Balanced => "bdar",
            PolicyKind::UniformFeasible => "uniform",
        }
    }

    /// Applies this rule. Only [`PolicyKind::UniformFeasible`] touches `rng`.
    pub fn select<R: Rng + ?Sized>(
        self,
        rng: &mut R,
        links: &LinkLoads,
        u: u32,
        v: u32,
        candidates: &[u32],
    ) -> Option<usize> {
        match self {
            PolicyKind::FirstFit => fdar_select(links, u, v, candidates),
            PolicyKind::Balanced => bdar_select(links, u, v, candidates),
            PolicyKind::UniformFeasible => uniform_feasible_select(rng, links, u, v, candidates),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownPolicy;

impl fmt::Display for UnknownPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("policy must be one of \"fdar\", \"bdar\", \"uniform\"")
    }
}

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fdar" => Ok(PolicyKind::FirstFit),
            "bdar" => Ok(PolicyKind::Balanced),
            "uniform" => Ok(PolicyKind::UniformFeasible),
            _ => Err(UnknownPolicy),
        }
    }
}

/// Draws one intermediate node uniformly from `V \ {u, v}`.
#[inline]
pub fn sample_intermediate<R: Rng + ?Sized>(rng: &mut R, n: u32, u: u32, v: u32) -> u32 {
    let (lo, hi) = if u < v { (u, v) } else { (v, u) };
    let mut w = rng.random_range(0..n - 2);
    if w >= lo {
        w += 1;
    }
    if w >= hi {
        w += 1;
    }
    w
}

/// Draws `d` intermediates with replacement, consuming exactly `d` draws.
pub fn sample_candidates<R: Rng + ?Sized>(rng: &mut R, n: u32, u: u32, v: u32, d: usize) -> CandidateSet {
    CandidateSet((0..d).map(|_| sample_intermediate(rng, n, u, v)).collect())
}

/// Indices of candidates whose route has spare capacity on both legs.
pub fn acceptance_set(links: &LinkLoads, u: u32, v: u32, candidates: &[u32]) -> Vec<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|&(_, &w)| links.route_feasible(u, v, w))
        .map(|(i, _)| i)
        .collect()
}

pub fn fdar_select(links: &LinkLoads, u: u32, v: u32, candidates: &[u32]) -> Option<usize> {
    candidates.iter().position(|&w| links.route_feasible(u, v, w))
}

/// Ties on the larger load go to the lowest index.
pub fn bdar_select(links: &LinkLoads, u: u32, v: u32, candidates: &[u32]) -> Option<usize> {
    let mut best: Option<(usize, u32)> = None;
    for (i, &w) in candidates.iter().enumerate() {
        if !links.route_feasible(u, v, w) {
            continue;
        }
        let worst = links.load(u, w).max(links.load(v, w));
        if best.is_none_or(|(_, b)| worst < b) {
            best = Some((i, worst));
        }
    }
    best.map(|(i, _)| i)
}

/// Uniform over the acceptance set. Draws from `rng` only when there are at
/// least two feasible candidates.
pub fn uniform_feasible_select<R: Rng + ?Sized>(
    rng: &mut R,
    links: &LinkLoads,
    u: u32,
    v: u32,
    candidates: &[u32],
) -> Option<usize> {
    let feasible = candidates
        .iter()
        .filter(|&&w| links.route_feasible(u, v, w))
        .count();
    let k = match feasible {
        0 => return None,
        1 => 0,
        m => rng.random_range(0..m),
    };
    candidates
        .iter()
        .enumerate()
        .filter(|&(_, &w)| links.route_feasible(u, v, w))
        .nth(k)
        .map(|(i, _)| i)
}
