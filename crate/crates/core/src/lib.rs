//! Dynamic alternative routing on a fully connected loss network.
//!
//! Calls arrive on the edges of the complete graph `K_n`. A call between `u`
//! and `v` samples `d` intermediate nodes and, if one of the two-link routes
//! `u -> w`, `v -> w` has spare capacity on both links, occupies it for an
//! exponential holding time. The crate provides:
//!
//! * [`state`]: the per-link load matrix, the active-call table and the
//!   saturation observables,
//! * [`policy`]: candidate sampling and the first-fit, balanced and
//!   uniform-feasible route selection rules,
//! * [`engine`]: the event-driven simulator, the infinite-capacity
//!   superprocess, coupled domination runs and a reference
//!   immigration-death chain,
//! * [`analytics`]: Poisson tails, Erlang B, capacity thresholds, level
//!   sequences and the exact per-state failure probability,
//! * [`metrics`]: run statistics, replication merging and Wilson intervals.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons also reject NaN

extern crate alloc;

pub mod analytics;
pub mod engine;
mod error;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod state;

pub use error::{Error, Result};
pub use policy::{CandidateSet, PolicyKind};
pub use state::{Capacity, CallRecord, LinkId, LinkLoads, NetworkState, Observables};
