//! Exact renewal-reward evaluation of threshold policies.
//!
//! Deliveries split time into i.i.d. epochs, so the long-run average AoI is
//! a ratio of per-epoch expectations. With epoch length `X`, the AoI area
//! over an epoch is `(2d + X) X / 2` under the continuous-area convention,
//! giving `d + E[X^2] / (2 E[X])`. Summing the post-action AoI slot by slot
//! gives `(2d + X - 1) X / 2` instead, i.e. exactly half a slot less on
//! average; that is the convention of the MDP cost and the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::CompensatedSum;
use crate::types::{ParamError, ThresholdPolicy};

/// Largest `tau_1` accepted by [`eval_threshold_exact`].
pub const DEFAULT_ENUMERATION_CAP: u32 = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenewalError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("tau_1 = {tau1} exceeds the enumeration cap {cap}; use Monte Carlo instead")]
    WindowTooLarge { tau1: u32, cap: u32 },
}

/// First two moments of the epoch length and the implied average AoI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_x: f64,
    pub mean_x2: f64,
    /// `d + E[X^2] / (2 E[X])`, continuous-area convention.
    pub avg_aoi: f64,
    /// `avg_aoi - 1/2`, the slot-sum convention used by the MDP and simulator.
    pub avg_aoi_per_slot: f64,
}

impl EpochStats {
    pub fn from_moments(mean_x: f64, mean_x2: f64, d: u32) -> Self {
        let avg_aoi = d as f64 + mean_x2 / (2.0 * mean_x);
        EpochStats {
            mean_x,
            mean_x2,
            avg_aoi,
            avg_aoi_per_slot: avg_aoi - 0.5,
        }
    }
}

/// Result of [`enumerate_epochs`]: moments plus bookkeeping that lets
/// callers check the enumeration covered all probability mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochEnumeration {
    pub stats: EpochStats,
    /// Total probability of all enumerated outcomes plus the geometric tail.
    pub mass: f64,
    /// Number of distinct switch sequences visited.
    pub paths: u64,
}

/// Exact epoch moments of `tp` at arrival probability `p` and transmission
/// length `d`.
pub fn eval_threshold_exact(
    tp: &ThresholdPolicy,
    p: f64,
    d: u32,
) -> Result<EpochStats, RenewalError> {
    enumerate_epochs(tp, p, d, DEFAULT_ENUMERATION_CAP).map(|e| e.stats)
}

/// Conditions on the first arrival slot `x1`. For `x1 > K` nothing can be
/// preempted and `X = x1 + d - 1`, whose moments follow from the geometric
/// law in closed form. For each `x1 <= K` the arrival patterns over slots
/// `x1 + 1 ..= tau_1` are enumerated, grouped by the sequence of switches
/// they trigger: from the update that arrived in slot `i`, the next arrival
/// at slot `j` (probability `(1-p)^(j-i-1) p`) is switched to when
/// `i <= K` and `j <= min(tau_i, i + d - 1)`; if no such arrival occurs the
/// update is delivered and `X = i + d - 1`. Later arrivals cannot matter:
/// thresholds never increase and `i` only grows.
pub fn enumerate_epochs(
    tp: &ThresholdPolicy,
    p: f64,
    d: u32,
    cap: u32,
) -> Result<EpochEnumeration, RenewalError> {
    let params = crate::types::Params::new(p, d, d + 1)?;
    let k = tp.k() as u32;
    if let Some(&tau1) = tp.tau().first() {
        if tau1 > cap {
            return Err(RenewalError::WindowTooLarge { tau1, cap });
        }
    }

    let mut acc = Accumulator::default();
    let q = 1.0 - params.p;
    let mut reach = 1.0; // P(no arrival in slots 1..x1-1)
    for x1 in 1..=k {
        walk(tp, q, params.p, d, x1, reach * params.p, &mut acc);
        reach *= q;
    }

    // x1 = K + W with W ~ Geom(p) on {1, 2, ...}
    let (t1, t2) = shifted_geometric_moments(params.p, (k + d - 1) as f64);
    acc.mass.add(reach);
    acc.m1.add(reach * t1);
    acc.m2.add(reach * t2);

    Ok(EpochEnumeration {
        stats: EpochStats::from_moments(acc.m1.value(), acc.m2.value(), d),
        mass: acc.mass.value(),
        paths: acc.paths,
    })
}

#[derive(Default)]
struct Accumulator {
    mass: CompensatedSum,
    m1: CompensatedSum,
    m2: CompensatedSum,
    paths: u64,
}

fn walk(tp: &ThresholdPolicy, q: f64, p: f64, d: u32, i: u32, prob: f64, acc: &mut Accumulator) {
    let last = match tp.threshold(i) {
        Some(t) => t.min(i + d - 1),
        None => i,
    };
    let mut quiet = prob;
    for j in i + 1..=last {
        walk(tp, q, p, d, j, quiet * p, acc);
        quiet *= q;
    }
    let x = (i + d - 1) as f64;
    acc.paths += 1;
    acc.mass.add(quiet);
    acc.m1.add(quiet * x);
    acc.m2.add(quiet * x * x);
}

/// Same moments as [`eval_threshold_exact`] without the enumeration cap.
///
/// The rest of an epoch depends only on the arrival slot `i` of the update
/// in service, so the conditional moments `E[X^k | i]` follow from a
/// backward recursion over `i = K, K - 1, ..., 1`:
/// `E[X^k | i] = sum_j (1-p)^(j-i-1) p E[X^k | j] + (1-p)^(w_i) (i+d-1)^k`
/// with `j` over the switching window of `i` and `w_i` its length. Cost is
/// `O(K d)`.
pub fn eval_threshold_recursive(
    tp: &ThresholdPolicy,
    p: f64,
    d: u32,
) -> Result<EpochStats, RenewalError> {
    let params = crate::types::Params::new(p, d, d + 1)?;
    let q = 1.0 - params.p;
    let k = tp.k() as u32;
    // moments[i - 1] = (E[X | i], E[X^2 | i]) for i in 1..=K + d
    let top = k + d;
    let mut moments = vec![(0.0, 0.0); top as usize];
    for i in (1..=top).rev() {
        let x = (i + d - 1) as f64;
        let last = match tp.threshold(i) {
            Some(t) => t.min(i + d - 1),
            None => i,
        };
        let mut m1 = CompensatedSum::default();
        let mut m2 = CompensatedSum::default();
        let mut quiet = 1.0;
        for j in i + 1..=last {
            let (a1, a2) = moments[j as usize - 1];
            m1.add(quiet * params.p * a1);
            m2.add(quiet * params.p * a2);
            quiet *= q;
        }
        m1.add(quiet * x);
        m2.add(quiet * x * x);
        moments[i as usize - 1] = (m1.value(), m2.value());
    }

    let mut m1 = CompensatedSum::default();
    let mut m2 = CompensatedSum::default();
    let mut reach = 1.0;
    for x1 in 1..=k {
        let (a1, a2) = moments[x1 as usize - 1];
        m1.add(reach * params.p * a1);
        m2.add(reach * params.p * a2);
        reach *= q;
    }
    let (t1, t2) = shifted_geometric_moments(params.p, (k + d - 1) as f64);
    m1.add(reach * t1);
    m2.add(reach * t2);
    Ok(EpochStats::from_moments(m1.value(), m2.value(), d))
}

/// Never-preempt policy: `X = W + d - 1` with `W ~ Geom(p)`.
pub fn myopic_closed_form(p: f64, d: u32) -> Result<EpochStats, RenewalError> {
    crate::types::Params::new(p, d, d + 1)?;
    let (mean_x, mean_x2) = shifted_geometric_moments(p, (d - 1) as f64);
    Ok(EpochStats::from_moments(mean_x, mean_x2, d))
}

/// `E[W + c]` and `E[(W + c)^2]` for `W ~ Geom(p)` on `{1, 2, ...}`.
fn shifted_geometric_moments(p: f64, c: f64) -> (f64, f64) {
    let ew = 1.0 / p;
    let ew2 = (2.0 - p) / (p * p);
    (ew + c, ew2 + 2.0 * c * ew + c * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Params;
    use proptest::prelude::*;

    fn tp(d: u32, tau: Vec<u32>) -> ThresholdPolicy {
        ThresholdPolicy::new(Params::new(0.5, d, 10 * d).unwrap(), tau).unwrap()
    }

    /// Slot-by-slot replay over every binary arrival pattern in the window.
    fn brute_force(tp: &ThresholdPolicy, p: f64, d: u32) -> (f64, f64, f64) {
        let k = tp.k() as u32;
        let (mut mass, mut m1, mut m2) = (0.0, 0.0, 0.0);
        let tau1 = tp.tau().first().copied().unwrap_or(0);
        for x1 in 1..=k {
            let first = (1.0 - p).powi(x1 as i32 - 1) * p;
            let width = tau1.saturating_sub(x1);
            for bits in 0u64..(1 << width) {
                let mut prob = first;
                let mut i = x1;
                let mut done = false;
                for off in 0..width {
                    let j = x1 + 1 + off;
                    let arrived = bits >> off & 1 == 1;
                    prob *= if arrived { p } else { 1.0 - p };
                    if done || j > i + d - 1 {
                        done = true;
                        continue;
                    }
                    if arrived && tp.threshold(i).is_some_and(|t| j <= t) {
                        i = j;
                    }
                }
                let x = (i + d - 1) as f64;
                mass += prob;
                m1 += prob * x;
                m2 += prob * x * x;
            }
        }
        // tail by direct summation, long enough for double precision
        let mut w_prob = (1.0 - p).powi(k as i32);
        for x1 in k + 1..k + 5000 {
            let x = (x1 + d - 1) as f64;
            let pr = w_prob * p;
            mass += pr;
            m1 += pr * x;
            m2 += pr * x * x;
            w_prob *= 1.0 - p;
        }
        (mass, m1, m2)
    }

    #[test]
    fn myopic_half_rate() {
        let s = myopic_closed_form(0.5, 2).unwrap();
        assert!((s.mean_x - 3.0).abs() < 1e-14);
        assert!((s.mean_x2 - 11.0).abs() < 1e-13);
        assert!((s.avg_aoi - (2.0 + 11.0 / 6.0)).abs() < 1e-13);
        let e = eval_threshold_exact(&tp(2, vec![]), 0.5, 2).unwrap();
        assert!((e.avg_aoi - s.avg_aoi).abs() < 1e-12);
    }

    #[test]
    fn myopic_deterministic() {
        let s = myopic_closed_form(1.0, 2).unwrap();
        assert_eq!((s.mean_x, s.mean_x2, s.avg_aoi), (2.0, 4.0, 3.0));
        let e = eval_threshold_exact(&tp(3, vec![]), 1.0, 3).unwrap();
        assert_eq!((e.mean_x, e.mean_x2, e.avg_aoi), (3.0, 9.0, 4.5));
        assert_eq!(e.avg_aoi_per_slot, 4.0);
    }

    #[test]
    fn myopic_mean_at_low_rate() {
        let s = myopic_closed_form(0.07, 10).unwrap();
        assert!((s.mean_x - (1.0 / 0.07 + 9.0)).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for (p, d, tau) in [
            (0.07, 10, vec![9, 8, 7, 6]),
            (0.3, 4, vec![5, 5, 4]),
            (0.5, 3, vec![3, 3]),
            (0.9, 5, vec![12, 9, 7, 6, 5]),
        ] {
            let pol = tp(d, tau);
            let e = enumerate_epochs(&pol, p, d, 30).unwrap();
            let (mass, m1, m2) = brute_force(&pol, p, d);
            assert!((e.mass - mass).abs() < 1e-12, "{p} {d}");
            assert!((e.stats.mean_x - m1).abs() < 1e-9 * m1, "{p} {d}");
            assert!((e.stats.mean_x2 - m2).abs() < 1e-9 * m2, "{p} {d}");
        }
    }

    #[test]
    fn recursion_matches_enumeration() {
        for (p, d, tau) in [
            (0.07, 10, vec![9, 8, 7, 6]),
            (0.07, 10, vec![11, 11, 10, 9, 8, 7]),
            (0.3, 4, vec![5, 5, 4]),
            (1.0, 3, vec![3, 3]),
            (0.02, 6, vec![25, 25, 25, 24, 22, 20, 18, 17]),
        ] {
            let pol = tp(d, tau);
            let a = eval_threshold_exact(&pol, p, d).unwrap();
            let b = eval_threshold_recursive(&pol, p, d).unwrap();
            assert!((a.mean_x - b.mean_x).abs() < 1e-12 * a.mean_x);
            assert!((a.mean_x2 - b.mean_x2).abs() < 1e-12 * a.mean_x2);
        }
    }

    #[test]
    fn recursion_has_no_cap() {
        let long: Vec<u32> = (0..80).map(|_| 90).collect();
        let pol = tp(10, long);
        assert!(eval_threshold_exact(&pol, 0.01, 10).is_err());
        let s = eval_threshold_recursive(&pol, 0.01, 10).unwrap();
        assert!(s.avg_aoi > 10.0 && s.avg_aoi.is_finite());
    }

    #[test]
    fn preemption_lengthens_epochs() {
        let base = eval_threshold_exact(&tp(10, vec![]), 0.07, 10).unwrap();
        let sw = eval_threshold_exact(&tp(10, vec![9, 8, 7, 6]), 0.07, 10).unwrap();
        assert!(sw.mean_x > base.mean_x);
        // ... yet lowers the average age
        assert!(sw.avg_aoi < base.avg_aoi);
    }

    #[test]
    fn cap_is_enforced() {
        let pol = tp(10, vec![31]);
        assert!(matches!(
            eval_threshold_exact(&pol, 0.5, 10),
            Err(RenewalError::WindowTooLarge { tau1: 31, cap: 30 })
        ));
        assert!(enumerate_epochs(&pol, 0.5, 10, 40).is_ok());
    }

    #[test]
    fn invalid_inputs() {
        assert!(myopic_closed_form(0.0, 3).is_err());
        assert!(myopic_closed_form(0.5, 1).is_err());
        assert!(eval_threshold_exact(&tp(3, vec![]), 1.5, 3).is_err());
    }

    fn threshold_strategy() -> impl Strategy<Value = (f64, u32, Vec<u32>)> {
        (
            0.02f64..=1.0,
            2u32..8,
            proptest::collection::vec(0u32..6, 0..8),
        )
            .prop_map(|(p, d, steps)| {
                // build a valid non-increasing sequence with tau_i >= i, bottom-up
                let k = steps.len();
                let mut tau = vec![0u32; k];
                let mut floor = 0;
                for idx in (0..k).rev() {
                    let t = (idx as u32 + 1).max(floor) + steps[idx];
                    tau[idx] = t;
                    floor = t;
                }
                tau.retain(|&t| t <= 24);
                let mut cleaned: Vec<u32> = Vec::new();
                for (idx, t) in tau.into_iter().enumerate() {
                    if t as usize > idx && cleaned.last().is_none_or(|&prev| prev >= t) {
                        cleaned.push(t);
                    } else {
                        break;
                    }
                }
                (p, d, cleaned)
            })
    }

    proptest! {
        #[test]
        fn mass_is_one((p, d, tau) in threshold_strategy()) {
            let e = enumerate_epochs(&tp(d, tau), p, d, 30).unwrap();
            prop_assert!((e.mass - 1.0).abs() < 1e-12, "mass {}", e.mass);
            prop_assert!(e.stats.mean_x2 >= e.stats.mean_x * e.stats.mean_x * (1.0 - 1e-12));
            prop_assert!(e.stats.avg_aoi >= d as f64);
        }

        #[test]
        fn recursion_agrees((p, d, tau) in threshold_strategy()) {
            let pol = tp(d, tau);
            let a = eval_threshold_exact(&pol, p, d).unwrap();
            let b = eval_threshold_recursive(&pol, p, d).unwrap();
            prop_assert!((a.avg_aoi - b.avg_aoi).abs() <= 1e-11 * a.avg_aoi);
        }

        #[test]
        fn no_thresholds_is_myopic(p in 0.001f64..=1.0, d in 2u32..40) {
            let e = eval_threshold_exact(&tp(d, vec![]), p, d).unwrap();
            let c = myopic_closed_form(p, d).unwrap();
            prop_assert!((e.mean_x - c.mean_x).abs() <= 1e-12 * c.mean_x);
            prop_assert!((e.mean_x2 - c.mean_x2).abs() <= 1e-12 * c.mean_x2);
            prop_assert!((e.avg_aoi - c.avg_aoi).abs() <= 1e-12 * c.avg_aoi);
        }
    }
}
