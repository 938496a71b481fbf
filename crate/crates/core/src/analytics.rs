//! Closed-form and recurrence-based quantities: Poisson tails, Erlang B,
//! the first-fit capacity threshold, the balanced-routing level sequences,
//! and the exact failure probability of an arriving call in a given state.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::state::{Capacity, LinkLoads};
use crate::{Error, Result};

/// Smallest probability reported; anything below is flushed to this floor
/// or zero.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// `P(Po(mu) >= d)`.
pub fn poisson_tail(mu: f64, d: u32) -> Result<f64> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("poisson mean must be finite and >= 0, got {mu}")));
    }
    if d == 0 {
        return Ok(1.0);
    }
    if mu == 0.0 {
        return Ok(0.0);
    }
    let ln_mu = libm::log(mu);
    let ln_pmf = |k: u32| -mu + k as f64 * ln_mu - libm::lgamma(k as f64 + 1.0);
    if d as f64 > mu {
        // Upper tail summed directly; consecutive term ratio mu/(k+1) < 1.
        let first = ln_pmf(d);
        let mut term = 1.0;
        let mut sum = 0.0;
        let mut k = d;
        loop {
            sum += term;
            k += 1;
            term *= mu / k as f64;
            if term < sum * 1e-17 {
                break;
            }
        }
        let tail = libm::exp(first + libm::log(sum));
        return Ok(if tail < PROBABILITY_FLOOR { 0.0 } else { tail.min(1.0) });
    }
    // d <= mu: the lower sum is at most about one half, so 1 - lower is stable.
    let lower: f64 = (0..d).map(|k| libm::exp(ln_pmf(k))).sum();
    Ok((1.0 - lower).clamp(0.0, 1.0))
}

/// Erlang B blocking probability with `servers` circuits and offered load
/// `load`, by the recursion `B(k) = a B(k-1) / (k + a B(k-1))`.
pub fn erlang_b(servers: u32, load: f64) -> Result<f64> {
    if !(load > 0.0) || !load.is_finite() {
        return Err(Error::Domain(format!("offered load must be finite and > 0, got {load}")));
    }
    let mut b = 1.0;
    for k in 1..=servers {
        b = load * b / (k as f64 + load * b);
    }
    Ok(b)
}

/// Capacity prefactor threshold for first-fit routing over an interval of
/// length `n^K`: `(K+2)/d` when `K < d-2`, otherwise `K+3-d`.
pub fn fdar_critical_alpha(k: f64, d: u32) -> f64 {
    let d = d as f64;
    if k < d - 2.0 {
        (k + 2.0) / d
    } else {
        k + 3.0 - d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelKind {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub h: u32,
    /// Link-count threshold `alpha_h`.
    pub alpha: f64,
    /// `alpha_h / (n - 1)`.
    pub normalized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelParams {
    pub n: f64,
    pub lambda: f64,
    pub d: u32,
    /// Interval exponent (upper sequence only).
    pub k: Option<f64>,
    /// Target exponent (lower sequence only).
    pub epsilon: Option<f64>,
}

/// Per-height thresholds used to bound (upper) or force (lower) the number
/// of links at each node carrying many calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSequence {
    pub kind: LevelKind,
    pub values: Vec<Level>,
    /// `h_0` for the upper sequence, `0` for the lower one.
    pub h_start: u32,
    /// `h*` for the upper sequence, the deepest admissible `h` for the lower.
    pub h_stop: u32,
    pub params: LevelParams,
}

impl LevelSequence {
    pub fn alpha(&self, h: u32) -> Option<f64> {
        self.values.iter().find(|l| l.h == h).map(|l| l.alpha)
    }
}

/// Upper-bound sequence for balanced routing.
///
/// Starts at `h_0 = ceil(max(8 lambda, 768 lambda^2))` with
/// `alpha_{h_0} = min((n-1)/8, (n-1)/(768 lambda))`, iterates
/// `alpha_h / (n-1) = 6 lambda (8 alpha_{h-1} / (n-1))^d` until the value drops
/// below `14 (K+2) ln n`, raises that last value `alpha_{h*}` to the
/// threshold and appends `alpha_{h*+1} = 2K + 5`.
pub fn bdar_upper_levels(n: f64, lambda: f64, d: u32, k: f64) -> Result<LevelSequence> {
    if !(lambda > 0.0) || d == 0 || !(k > 0.0) || !(n >= 4.0) {
        return Err(Error::Domain(format!(
            "need n >= 4, lambda > 0, d >= 1, K > 0 (got n={n}, lambda={lambda}, d={d}, K={k})"
        )));
    }
    let m = n - 1.0;
    let h0 = libm::ceil((8.0 * lambda).max(768.0 * lambda * lambda)) as u32;
    let threshold = 14.0 * (k + 2.0) * libm::log(n);
    let start = (m / 8.0).min(m / (768.0 * lambda));
    if start < threshold || 48.0 * lambda * (8.0 * start / m) > 0.5 {
        return Err(Error::Domain(format!(
            "n = {n} is too small for the upper level sequence: alpha_h0 = {start:.3} < 14(K+2) ln n = {threshold:.3}"
        )));
    }
    let level = |h, alpha: f64| Level { h, alpha, normalized: alpha / m };
    let mut values = vec![level(h0, start)];
    let mut h = h0;
    let mut alpha = start;
    loop {
        h += 1;
        alpha = m * 6.0 * lambda * libm::pow(8.0 * alpha / m, d as f64);
        if alpha < threshold {
            values.push(level(h, threshold));
            break;
        }
        values.push(level(h, alpha));
    }
    let h_star = h;
    values.push(level(h_star + 1, 2.0 * k + 5.0));
    Ok(LevelSequence {
        kind: LevelKind::Upper,
        values,
        h_start: h0,
        h_stop: h_star,
        params: LevelParams { n, lambda, d, k: Some(k), epsilon: None },
    })
}

/// `nu = min(1, lambda) / (24 e^d)`.
pub fn lower_level_nu(lambda: f64, d: u32) -> f64 {
    lambda.min(1.0) / (24.0 * libm::exp(d as f64))
}

/// Lower-bound sequence for balanced routing: `beta_0 = 1`,
/// `beta_h = (nu / h) beta_{h-1}^d`, kept while `beta_h >= (n-1)^(-epsilon)`.
pub fn bdar_lower_levels(n: f64, lambda: f64, d: u32, epsilon: f64) -> Result<LevelSequence> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(lambda > 0.0) || d == 0 || !(n >= 4.0) {
        return Err(Error::Domain(format!(
            "need n >= 4, lambda > 0, d >= 1 (got n={n}, lambda={lambda}, d={d})"
        )));
    }
    let m = n - 1.0;
    let nu = lower_level_nu(lambda, d);
    let floor = libm::pow(m, -epsilon);
    let mut values = vec![Level { h: 0, alpha: m, normalized: 1.0 }];
    let mut beta = 1.0;
    let mut h = 0u32;
    loop {
        let next = nu / (h + 1) as f64 * libm::pow(beta, d as f64);
        if next < floor {
            break;
        }
        h += 1;
        beta = next;
        values.push(Level { h, alpha: beta * m, normalized: beta });
    }
    Ok(LevelSequence {
        kind: LevelKind::Lower,
        values,
        h_start: 0,
        h_stop: h,
        params: LevelParams { n, lambda, d, k: None, epsilon: Some(epsilon) },
    })
}

/// `2 beta_{h+1} <= beta_h (1 - 1/e)` for consecutive emitted levels.
pub fn lower_levels_contract(seq: &LevelSequence) -> bool {
    let factor = 1.0 - libm::exp(-1.0);
    seq.values
        .windows(2)
        .all(|w| 2.0 * w[1].normalized <= w[0].normalized * factor)
}

/// Exact failure probability of a uniformly random arriving call together
/// with the four bounds expressed through saturated-link counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockingBounds {
    pub exact: f64,
    /// `(min_v d(v) / (n-2))^d`
    pub lb_min: f64,
    /// `n^-1 sum_v (d(v) / (n-2))^d`
    pub lb_sum: f64,
    /// `2^(d+1) n^-1 sum_v (d(v) / (n-2))^d`
    pub ub_sum: f64,
    /// `(2 max_v d(v) / (n-2))^d`
    pub ub_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsCheck {
    pub holds: bool,
    /// Smallest `rhs - lhs` across the five inequalities.
    pub min_slack: f64,
    pub bounds: BlockingBounds,
}

/// Saturated-neighbour sets as bitsets, one row of `words` u64 per node.
struct SaturationBits {
    words: usize,
    bits: Vec<u64>,
}

impl SaturationBits {
    fn new(links: &LinkLoads) -> Self {
        let n = links.n();
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; n * words];
        for (link, load) in links.iter() {
            if links.capacity().is_full(load) {
                let (row, w) = (link.endpoint as usize, link.via as usize);
                bits[row * words + w / 64] |= 1 << (w % 64);
            }
        }
        Self { words, bits }
    }

    fn row(&self, v: usize) -> &[u64] {
        &self.bits[v * self.words..(v + 1) * self.words]
    }

    /// `|(S(u) | S(v)) \ {u, v}|`
    fn union_excluding(&self, u: usize, v: usize) -> u32 {
        let (ru, rv) = (self.row(u), self.row(v));
        let mut count = 0;
        for i in 0..self.words {
            let mut word = ru[i] | rv[i];
            if u / 64 == i {
                word &= !(1 << (u % 64));
            }
            if v / 64 == i {
                word &= !(1 << (v % 64));
            }
            count += word.count_ones();
        }
        count
    }
}

/// Failure probability of the next arrival and its saturated-link bounds.
/// Only defined for finite capacity.
pub fn exact_failure_probability(links: &LinkLoads, d: u32) -> Result<BlockingBounds> {
    let n = links.n();
    if n < 3 {
        return Err(Error::Domain(format!("need n >= 3, got {n}")));
    }
    if links.capacity() == Capacity::Infinite {
        return Err(Error::Domain("failure probability needs a finite capacity".into()));
    }
    let bits = SaturationBits::new(links);
    let denom = (n - 2) as f64;
    let pairs = (n * (n - 1) / 2) as f64;
    let mut exact = 0.0;
    for u in 0..n {
        for v in u + 1..n {
            let f = bits.union_excluding(u, v) as f64 / denom;
            exact += libm::pow(f, d as f64);
        }
    }
    exact /= pairs;

    let sat = links.sat_at_all();
    let powered: f64 = sat.iter().map(|&s| libm::pow(s as f64 / denom, d as f64)).sum();
    let min = sat.iter().copied().min().unwrap_or(0) as f64;
    let max = sat.iter().copied().max().unwrap_or(0) as f64;
    let nf = n as f64;
    Ok(BlockingBounds {
        exact,
        lb_min: libm::pow(min / denom, d as f64),
        lb_sum: powered / nf,
        ub_sum: libm::pow(2.0, d as f64 + 1.0) * powered / nf,
        ub_max: libm::pow(2.0 * max / denom, d as f64),
    })
}

/// Checks `lb_min <= lb_sum <= exact <= ub_sum` and `exact <= ub_max`,
/// allowing a relative rounding tolerance of `1e-12`.
pub fn blocking_bounds_hold(links: &LinkLoads, d: u32) -> Result<BoundsCheck> {
    let b = exact_failure_probability(links, d)?;
    let pairs = [
        (b.lb_min, b.lb_sum),
        (b.lb_sum, b.exact),
        (b.exact, b.ub_sum),
        (b.exact, b.ub_max),
    ];
    let mut holds = true;
    let mut min_slack = f64::INFINITY;
    for (lhs, rhs) in pairs {
        let slack = rhs - lhs;
        min_slack = min_slack.min(slack);
        if slack < -1e-12 * lhs.abs().max(rhs.abs()).max(1e-300) {
            holds = false;
        }
    }
    Ok(BoundsCheck { holds, min_slack, bounds: b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::LinkId;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn poisson_tail_values() {
        assert_eq!(poisson_tail(3.7, 0).unwrap(), 1.0);
        assert_eq!(poisson_tail(0.0, 0).unwrap(), 1.0);
        assert_eq!(poisson_tail(0.0, 2).unwrap(), 0.0);
        let e = libm::exp(-1.0);
        assert!(close(poisson_tail(1.0, 1).unwrap(), 1.0 - e, 1e-15));
        let p2 = poisson_tail(1.0, 2).unwrap();
        assert!(close(p2, 1.0 - 2.0 * e, 1e-15));
        assert!(p2 <= 0.5);
        assert!(poisson_tail(-0.1, 1).is_err());
    }

    #[test]
    fn poisson_tail_large_arguments() {
        // Far tail: P(Po(1) >= 200) ~ e^-1 / 200! ~ 1e-375, below the floor.
        assert_eq!(poisson_tail(1.0, 200).unwrap(), 0.0);
        // Mean 1000, tail at the mean is a little above one half.
        let p = poisson_tail(1000.0, 1000).unwrap();
        assert!(p > 0.5 && p < 0.52, "{p}");
        let q = poisson_tail(800.0, 1000).unwrap();
        assert!(q > 0.0 && q < 1e-10, "{q}");
    }

    #[test]
    fn erlang_b_values() {
        assert_eq!(erlang_b(0, 3.0).unwrap(), 1.0);
        assert!(close(erlang_b(2, 1.0).unwrap(), 0.2, 1e-15));
        assert!(close(erlang_b(1, 1.0).unwrap(), 0.5, 1e-15));
        assert!(erlang_b(2, 0.0).is_err());
    }

    #[test]
    fn critical_alpha() {
        assert_eq!(fdar_critical_alpha(1.0, 2), 2.0);
        assert!(close(fdar_critical_alpha(0.5, 3), 2.5 / 3.0, 1e-15));
        assert_eq!(fdar_critical_alpha(2.0, 4), 1.0);
        assert!(close(fdar_critical_alpha(2.0 - 1e-12, 4), 1.0, 1e-11));
    }

    #[test]
    fn upper_levels_first_steps() {
        let seq = bdar_upper_levels(1e8, 1.0, 2, 1.0).unwrap();
        assert_eq!(seq.h_start, 768);
        let a0 = seq.values[0];
        assert_eq!(a0.h, 768);
        assert!(close(8.0 * a0.normalized, 1.0 / 96.0, 1e-15));
        let a1 = seq.values[1];
        assert!(close(8.0 * a1.normalized, 1.0 / 192.0, 1e-15));
        let last = *seq.values.last().unwrap();
        assert_eq!(last.h, seq.h_stop + 1);
        assert_eq!(last.alpha, 7.0);
        assert!(close(seq.alpha(seq.h_stop).unwrap(), 42.0 * libm::log(1e8), 1e-9));
        for w in seq.values[..seq.values.len() - 1].windows(2) {
            assert!(w[1].alpha < w[0].alpha);
        }
    }

    #[test]
    fn upper_levels_reject_small_n() {
        assert!(matches!(bdar_upper_levels(1000.0, 1.0, 2, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn lower_levels_first_steps() {
        let nu = lower_level_nu(1.0, 2);
        let e = core::f64::consts::E;
        assert!(close(nu, 1.0 / (24.0 * e * e), 1e-18));
        assert!(close(nu, 0.005_639_0, 1e-7));
        let seq = bdar_lower_levels(1e12, 1.0, 2, 0.99).unwrap();
        assert_eq!(seq.values[0].normalized, 1.0);
        assert!(close(seq.values[1].normalized, nu, 1e-18));
        let b2 = nu / 2.0 * nu * nu;
        assert!(close(seq.values[2].normalized, b2, 1e-20));
        assert!(close(b2, 8.965e-8, 0.001e-8));
        assert_eq!(seq.h_stop, 2);
        assert!(lower_levels_contract(&seq));
        assert!(bdar_lower_levels(1e6, 1.0, 2, 1.5).is_err());
    }

    #[test]
    fn failure_probability_single_saturated_link() {
        // Only 0->2 full: pairs {0,1} and {0,3} each fail w.p. (1/2)^2.
        let links = LinkLoads::from_entries(4, Capacity::Finite(1), [(LinkId::new(0, 2), 1)]).unwrap();
        let b = exact_failure_probability(&links, 2).unwrap();
        assert!(close(b.exact, 1.0 / 12.0, 1e-15));
        assert!(close(b.lb_sum, 1.0 / 16.0, 1e-15));
        assert!(close(b.ub_sum, 0.5, 1e-15));
        assert!(close(b.ub_max, 1.0, 1e-15));
        assert_eq!(b.lb_min, 0.0);
        assert!(blocking_bounds_hold(&links, 2).unwrap().holds);
    }

    #[test]
    fn failure_probability_empty_and_full() {
        let empty = LinkLoads::new(6, Capacity::Finite(2));
        let check = blocking_bounds_hold(&empty, 3).unwrap();
        assert!(check.holds);
        assert_eq!(check.min_slack, 0.0);
        assert_eq!(check.bounds.exact, 0.0);

        // Every link full: d(v) = n - 1 exceeds n - 2, so both lower bounds
        // rise above the certain failure.
        let n = 6;
        let all = (0..n as u32)
            .flat_map(|a| (0..n as u32).filter(move |&b| b != a).map(move |b| (LinkId::new(a, b), 2)));
        let full = LinkLoads::from_entries(n, Capacity::Finite(2), all).unwrap();
        let check = blocking_bounds_hold(&full, 3).unwrap();
        let b = check.bounds;
        assert_eq!(b.exact, 1.0);
        assert!(close(b.ub_max, libm::pow(2.0 * 5.0 / 4.0, 3.0), 1e-12));
        assert!(b.exact <= b.ub_sum);
        assert!(close(b.lb_sum, libm::pow(5.0 / 4.0, 3.0), 1e-12));
        assert!(!check.holds);
    }

    #[test]
    fn lower_sum_bound_fails_on_reachable_state() {
        // D = 1, calls {0,1} via 2, {0,2} via 3, {0,3} via 1: every link out
        // of node 0 is full, plus 1->2, 2->3, 3->1.
        let links = LinkLoads::from_entries(
            4,
            Capacity::Finite(1),
            [(0, 2), (1, 2), (0, 3), (2, 3), (0, 1), (3, 1)]
                .map(|(a, b)| (LinkId::new(a, b), 1)),
        )
        .unwrap();
        let b = exact_failure_probability(&links, 2).unwrap();
        // Pairs with node 0 always fail; the other three fail w.p. 1/4.
        assert!(close(b.exact, 0.625, 1e-15));
        assert!(close(b.lb_sum, 0.75, 1e-15));
        assert!(!blocking_bounds_hold(&links, 2).unwrap().holds);
    }

    #[test]
    fn failure_probability_rejects_infinite() {
        let links = LinkLoads::new(5, Capacity::Infinite);
        assert!(exact_failure_probability(&links, 2).is_err());
    }

    #[test]
    fn bitset_spans_words() {
        let n = 130;
        let links = LinkLoads::from_entries(
            n,
            Capacity::Finite(1),
            [(LinkId::new(0, 129), 1), (LinkId::new(1, 64), 1), (LinkId::new(1, 0), 1)],
        )
        .unwrap();
        let bits = SaturationBits::new(&links);
        // S(0) = {129}, S(1) = {64, 0}; excluding {0, 1} leaves {64, 129}.
        assert_eq!(bits.union_excluding(0, 1), 2);
        assert_eq!(bits.union_excluding(1, 64), 1);
    }
}
