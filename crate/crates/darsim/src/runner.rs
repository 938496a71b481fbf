//! Replications and sweeps.
//!
//! Replication `i` of a configuration runs with seed
//! `replication_seed(seed, i)` on a worker pool; reports are merged in index
//! order, so the result does not depend on the number of workers.

use std::io::Write;
use std::sync::Mutex;

use darsim_core::engine::{
    run_coupled, run_simulation, run_simulation_with, run_superprocess, run_superprocess_with,
    EventView, SimConfig, SimMode, TraceEvent,
};
use darsim_core::metrics::{wilson_interval, Interval, MetricsReport};
use darsim_core::rng::replication_seed;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AxisValue, ExperimentSpec};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] darsim_core::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("trace output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicated {
    pub report: MetricsReport,
    pub replications: u32,
    pub events: u64,
    /// Domination violations summed over coupled replications.
    pub violations: u64,
}

impl Replicated {
    pub fn interval(&self, level: f64) -> Option<Interval> {
        wilson_interval(self.report.blocked, self.report.arrivals, level).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: AxisValue,
    pub result: Replicated,
}

/// Worker pool with `jobs` threads (`0` lets rayon decide).
pub fn pool(jobs: usize) -> Result<rayon::ThreadPool, RunError> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

/// One record per event: time, kind, endpoints, candidates and the chosen
/// candidate index.
#[derive(Serialize)]
struct TraceLine<'a> {
    time: f64,
    kind: &'static str,
    call: u64,
    u: u32,
    v: u32,
    candidates: &'a [u32],
    chosen: Option<usize>,
}

struct TraceWriter<W> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> TraceWriter<W> {
    fn record(&mut self, e: &TraceEvent<'_>) {
        if self.error.is_some() {
            return;
        }
        let line = TraceLine {
            time: e.time,
            kind: e.kind.name(),
            call: e.call_id,
            u: e.u,
            v: e.v,
            candidates: e.candidates,
            chosen: e.chosen,
        };
        let res = serde_json::to_writer(&mut self.out, &line)
            .map_err(std::io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }
}

fn run_one(config: &SimConfig, trace: Option<&mut dyn Write>) -> Result<Replicated, RunError> {
    let (report, events, violations) = match (config.mode, trace) {
        (SimMode::Coupled, _) => {
            let r = run_coupled(config)?;
            (r.capacitated, r.event_count, r.violations)
        }
        (mode, Some(out)) => {
            let mut writer = TraceWriter { out, error: None };
            let mut observer =
                |e: &TraceEvent<'_>, _: &EventView<'_>| writer.record(e);
            let r = if mode == SimMode::Superprocess {
                run_superprocess_with(config, &mut observer)?
            } else {
                run_simulation_with(config, &mut observer)?
            };
            if let Some(e) = writer.error {
                return Err(e.into());
            }
            (r.metrics, r.event_count, 0)
        }
        (SimMode::Superprocess, None) => {
            let r = run_superprocess(config)?;
            (r.metrics, r.event_count, 0)
        }
        (SimMode::Capacitated, None) => {
            let r = run_simulation(config)?;
            (r.metrics, r.event_count, 0)
        }
    };
    Ok(Replicated { report, replications: 1, events, violations })
}

/// Runs `replications` independent copies of `config` and merges them.
/// With `trace`, replication 0 streams its events there.
pub fn run_replications(
    pool: &rayon::ThreadPool,
    config: &SimConfig,
    replications: u32,
    trace: Option<&mut (dyn Write + Send)>,
) -> Result<Replicated, RunError> {
    let trace = Mutex::new(trace);
    let results: Vec<Result<Replicated, RunError>> = pool.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|i| {
                let c = SimConfig { seed: replication_seed(config.seed, i as u64), ..config.clone() };
                let mut r = if i == 0 {
                    match trace.lock().unwrap().take() {
                        Some(out) => run_one(&c, Some(out as &mut dyn Write)),
                        None => run_one(&c, None),
                    }
                } else {
                    run_one(&c, None)
                }?;
                r.report.tag_replication(i);
                Ok(r)
            })
            .collect()
    });
    let mut merged = Replicated {
        report: MetricsReport::empty(),
        replications: 0,
        events: 0,
        violations: 0,
    };
    for r in results {
        let r = r?;
        merged.report = merged.report.merge(&r.report)?;
        merged.replications += 1;
        merged.events += r.events;
        merged.violations += r.violations;
    }
    Ok(merged)
}

/// Every point of the experiment's sweep in axis order; empty without a
/// sweep.
pub fn run_sweep(pool: &rayon::ThreadPool, spec: &ExperimentSpec) -> Result<Vec<SweepPoint>, RunError> {
    let Some(sweep) = &spec.sweep else {
        return Ok(Vec::new());
    };
    sweep
        .values
        .iter()
        .map(|&value| {
            let config = spec.point_config(value);
            let result = run_replications(pool, &config, spec.replications, None)?;
            Ok(SweepPoint { value, result })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use darsim_core::{Capacity, PolicyKind};

    fn small() -> SimConfig {
        SimConfig {
            warmup: 2.0,
            snapshot_every: 1.0,
            ..SimConfig::new(8, 1.0, 2, Capacity::Finite(2), PolicyKind::Balanced, 10.0, 5)
        }
    }

    #[test]
    fn merged_result_independent_of_worker_count() {
        let one = run_replications(&pool(1).unwrap(), &small(), 5, None).unwrap();
        let three = run_replications(&pool(3).unwrap(), &small(), 5, None).unwrap();
        assert_eq!(one, three);
        assert_eq!(one.replications, 5);
        let tags: Vec<u32> = one.report.snapshots.iter().map(|s| s.replication).collect();
        assert!(tags.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*tags.last().unwrap(), 4);
    }

    #[test]
    fn trace_has_one_line_per_event() {
        let mut buf = Vec::new();
        let r = run_replications(&pool(1).unwrap(), &small(), 2, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(!lines.is_empty());
        assert!((lines.len() as u64) < r.events);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["kind"], "arrive-accept");
        assert!(first["candidates"].as_array().unwrap().len() == 2);
    }

    #[test]
    fn coupled_replications_count_violations() {
        let c = SimConfig {
            mode: SimMode::Coupled,
            max_events: Some(5000),
            horizon: 1e6,
            ..small()
        };
        let r = run_replications(&pool(1).unwrap(), &c, 2, None).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.events, 10_000);
    }
}
