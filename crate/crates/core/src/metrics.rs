//! Run statistics.
//!
//! A [`Collector`] is fed by the engine between events; it integrates
//! time-weighted quantities over `[warmup, horizon]`, counts arrivals that
//! fall in that window and records snapshots on a fixed grid. The finished
//! [`MetricsReport`] is a plain value that merges across replications.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::policy::PolicyKind;
use crate::state::{Capacity, LinkLoads};
use crate::{Error, Result};

/// Parameters a report must share with another to be merged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportSetup {
    pub n: usize,
    pub capacity: Capacity,
    pub policy: PolicyKind,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub replication: u32,
    pub time: f64,
    pub total_calls: u64,
    pub max_sat: u32,
    pub node_load: Vec<u32>,
    pub sat_at: Vec<u32>,
    pub sat_via: Vec<u32>,
    /// Blocked calls counted since warmup, up to this time.
    pub blocked_cum: u64,
    /// Full row-major load matrix, only with full snapshots enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loads: Option<Vec<u32>>,
}

impl Snapshot {
    pub fn mean_sat_at(&self) -> f64 {
        mean(&self.sat_at)
    }

    pub fn mean_sat_via(&self) -> f64 {
        mean(&self.sat_via)
    }
}

fn mean(xs: &[u32]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` only for the empty report.
    pub setup: Option<ReportSetup>,
    pub arrivals: u64,
    pub accepted: u64,
    pub blocked: u64,
    /// Total time covered by the measurement windows.
    pub measured_time: f64,
    /// Integral of the number of calls in progress over the windows.
    pub call_time: f64,
    /// `load_histogram[k]` = link-time spent at load `k`.
    pub load_histogram: Vec<f64>,
    pub peak_max_sat: u32,
    pub snapshots: Vec<Snapshot>,
    /// Distribution of per-pair call counts across snapshots (superprocess
    /// runs only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pair_count_histogram: Vec<u64>,
}

impl MetricsReport {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn blocking_fraction(&self) -> f64 {
        if self.arrivals == 0 {
            0.0
        } else {
            self.blocked as f64 / self.arrivals as f64
        }
    }

    pub fn mean_total_calls(&self) -> f64 {
        if self.measured_time > 0.0 {
            self.call_time / self.measured_time
        } else {
            0.0
        }
    }

    /// Normalised time-weighted distribution of link loads.
    pub fn load_distribution(&self) -> Vec<f64> {
        let total: f64 = self.load_histogram.iter().sum();
        if total == 0.0 {
            return vec![0.0; self.load_histogram.len()];
        }
        self.load_histogram.iter().map(|w| w / total).collect()
    }

    /// Mean and variance of the per-pair counts in `pair_count_histogram`.
    pub fn pair_count_moments(&self) -> Option<(f64, f64)> {
        let total: u64 = self.pair_count_histogram.iter().sum();
        if total == 0 {
            return None;
        }
        let t = total as f64;
        let mean = self
            .pair_count_histogram
            .iter()
            .enumerate()
            .map(|(k, &c)| k as f64 * c as f64)
            .sum::<f64>()
            / t;
        let var = self
            .pair_count_histogram
            .iter()
            .enumerate()
            .map(|(k, &c)| (k as f64 - mean) * (k as f64 - mean) * c as f64)
            .sum::<f64>()
            / t;
        Some((mean, var))
    }

    /// Sums counts and histograms and concatenates snapshots, ordered by
    /// `(replication, time)`. The empty report is the identity.
    pub fn merge(&self, other: &MetricsReport) -> Result<MetricsReport> {
        let setup = match (self.setup, other.setup) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::IncompatibleReports(format!("{a:?} vs {b:?}")));
            }
            (a, b) => a.or(b),
        };
        let mut snapshots = Vec::with_capacity(self.snapshots.len() + other.snapshots.len());
        snapshots.extend(self.snapshots.iter().cloned());
        snapshots.extend(other.snapshots.iter().cloned());
        snapshots.sort_by(|a, b| {
            a.replication
                .cmp(&b.replication)
                .then(a.time.total_cmp(&b.time))
        });
        Ok(MetricsReport {
            setup,
            arrivals: self.arrivals + other.arrivals,
            accepted: self.accepted + other.accepted,
            blocked: self.blocked + other.blocked,
            measured_time: self.measured_time + other.measured_time,
            call_time: self.call_time + other.call_time,
            load_histogram: add_padded(&self.load_histogram, &other.load_histogram, |a, b| a + b),
            peak_max_sat: self.peak_max_sat.max(other.peak_max_sat),
            snapshots,
            pair_count_histogram: add_padded(
                &self.pair_count_histogram,
                &other.pair_count_histogram,
                |a, b| a + b,
            ),
        })
    }

    /// Overwrites the replication tag of every snapshot.
    pub fn tag_replication(&mut self, replication: u32) {
        for s in &mut self.snapshots {
            s.replication = replication;
        }
    }
}

fn add_padded<T: Copy + Default>(a: &[T], b: &[T], add: impl Fn(T, T) -> T) -> Vec<T> {
    let len = a.len().max(b.len());
    (0..len)
        .map(|i| {
            add(
                a.get(i).copied().unwrap_or_default(),
                b.get(i).copied().unwrap_or_default(),
            )
        })
        .collect()
}

/// Confidence interval for a proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> Result<Interval> {
    if trials == 0 {
        return Err(Error::Domain("wilson interval needs at least one trial".into()));
    }
    if successes > trials {
        return Err(Error::Domain(format!("{successes} successes out of {trials} trials")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let z = normal_quantile(0.5 + level / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    Ok(Interval { lo, hi, level })
}

/// Standard normal quantile (Acklam's rational approximation, refined with
/// one Halley step against `erfc`).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let p_low = 0.024_25;
    let x = if p < p_low {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * libm::sqrt(2.0 * core::f64::consts::PI) * libm::exp(x * x / 2.0);
    x - u / (1.0 + x * u / 2.0)
}

/// Mean and standard error from batch means.
pub fn batch_mean_se(batches: &[f64]) -> (f64, f64) {
    let k = batches.len();
    if k == 0 {
        return (0.0, f64::INFINITY);
    }
    let m = batches.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (m, f64::INFINITY);
    }
    let var = batches.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / (k - 1) as f64;
    (m, libm::sqrt(var / k as f64))
}

/// Splits `[from, to]` (inside the measurement window) across the
/// [`BATCHES`] equal slices starting at `start`, calling `f(batch, dt)`.
pub(crate) fn split_into_batches(
    start: f64,
    batch_len: f64,
    from: f64,
    to: f64,
    mut f: impl FnMut(usize, f64),
) {
    if !(batch_len > 0.0) || to <= from {
        return;
    }
    let boundary = |b: usize| start + b as f64 * batch_len;
    let mut b = (((from - start) / batch_len) as usize).min(BATCHES - 1);
    let mut a = from;
    while a < to {
        // Rounding can place `a` on the far edge of batch `b`.
        while b < BATCHES - 1 && boundary(b + 1) <= a {
            b += 1;
        }
        let stop = if b == BATCHES - 1 { to } else { boundary(b + 1).min(to) };
        f(b, stop - a);
        a = stop;
    }
}

/// Time-weighted accumulator driven by the engine.
///
/// Call [`Collector::advance`] with the time of each event *before* the
/// state changes; the state is piecewise constant between events.
#[derive(Debug, Clone)]
pub struct Collector {
    report: MetricsReport,
    warmup: f64,
    horizon: f64,
    last: f64,
    snapshot_every: f64,
    next_snapshot: f64,
    full_snapshots: bool,
    batch_len: f64,
    batches: Vec<f64>,
}

/// Borrowed view of whatever process the engine is running.
pub struct StateView<'a> {
    pub links: &'a LinkLoads,
    pub node_load: &'a [u32],
    pub total_calls: u64,
    /// Per-pair call counts, upper triangle row-major, if tracked.
    pub pair_counts: Option<&'a [u32]>,
}

/// Number of equal-length batches the measurement window is cut into for
/// standard errors of time averages.
pub const BATCHES: usize = 20;

impl Collector {
    pub fn new(
        setup: ReportSetup,
        warmup: f64,
        horizon: f64,
        snapshot_every: f64,
        full_snapshots: bool,
    ) -> Self {
        let report = MetricsReport {
            setup: Some(setup),
            load_histogram: match setup.capacity {
                Capacity::Finite(d) => vec![0.0; d as usize + 1],
                Capacity::Infinite => vec![0.0; 1],
            },
            ..MetricsReport::default()
        };
        let next_snapshot = if snapshot_every > 0.0 { warmup } else { f64::INFINITY };
        Self {
            report,
            warmup,
            horizon,
            last: 0.0,
            snapshot_every,
            next_snapshot,
            full_snapshots,
            batch_len: (horizon - warmup) / BATCHES as f64,
            batches: vec![0.0; BATCHES],
        }
    }

    #[inline]
    pub fn in_window(&self, t: f64) -> bool {
        t >= self.warmup && t <= self.horizon
    }

    /// Integrates the current state from the previous event time to `t`
    /// (clipped to the measurement window) and takes due snapshots.
    pub fn advance(&mut self, t: f64, state: &StateView<'_>) {
        let t = t.min(self.horizon);
        while self.next_snapshot <= t {
            self.take_snapshot(self.next_snapshot, state);
            self.next_snapshot += self.snapshot_every;
        }
        let from = self.last.max(self.warmup);
        if t > from {
            let dt = t - from;
            self.report.measured_time += dt;
            self.report.call_time += state.total_calls as f64 * dt;
            let levels = state.links.level_counts();
            if levels.len() > self.report.load_histogram.len() {
                self.report.load_histogram.resize(levels.len(), 0.0);
            }
            for (slot, &count) in self.report.load_histogram.iter_mut().zip(levels) {
                if count > 0 {
                    *slot += count as f64 * dt;
                }
            }
            let sat = state.links.max_sat();
            self.report.peak_max_sat = self.report.peak_max_sat.max(sat);
            self.add_to_batches(from, t, state.total_calls as f64);
        }
        if t > self.last {
            self.last = t;
        }
    }

    fn add_to_batches(&mut self, from: f64, to: f64, value: f64) {
        let batches = &mut self.batches;
        split_into_batches(self.warmup, self.batch_len, from, to, |b, dt| batches[b] += value * dt);
    }

    fn take_snapshot(&mut self, time: f64, state: &StateView<'_>) {
        let links = state.links;
        self.report.snapshots.push(Snapshot {
            replication: 0,
            time,
            total_calls: state.total_calls,
            max_sat: links.max_sat(),
            node_load: state.node_load.to_vec(),
            sat_at: links.sat_at_all().to_vec(),
            sat_via: links.sat_via_all().to_vec(),
            blocked_cum: self.report.blocked,
            loads: self.full_snapshots.then(|| links.as_matrix().to_vec()),
        });
        if let Some(pairs) = state.pair_counts {
            let hist = &mut self.report.pair_count_histogram;
            for &c in pairs {
                let c = c as usize;
                if c >= hist.len() {
                    hist.resize(c + 1, 0);
                }
                hist[c] += 1;
            }
        }
    }

    /// Counts an arrival at time `t` if it falls inside the window.
    pub fn record_arrival(&mut self, t: f64, accepted: bool) {
        if !self.in_window(t) {
            return;
        }
        self.report.arrivals += 1;
        if accepted {
            self.report.accepted += 1;
        } else {
            self.report.blocked += 1;
        }
    }

    /// Closes the window at the horizon.
    pub fn finish(mut self, state: &StateView<'_>) -> (MetricsReport, Vec<f64>) {
        self.advance(self.horizon, state);
        let batch_means = if self.batch_len > 0.0 {
            self.batches.iter().map(|b| b / self.batch_len).collect()
        } else {
            Vec::new()
        };
        (self.report, batch_means)
    }

    /// Stops measuring at the last event time; used when a run ends on an
    /// event cap before the horizon.
    pub fn truncate_at_last(&mut self) {
        self.horizon = self.last;
    }
}
