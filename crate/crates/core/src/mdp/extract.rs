use std::fmt;

use crate::types::{Action, EpochCoords, TabularPolicy, ThresholdPolicy};

/// Why a tabular policy has no multi-threshold representation.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeViolation {
    /// For arrival slot `i`, epoch slot `j` is SKIP while a later slot is
    /// SWITCH.
    Gap(EpochCoords),
    /// `tau_i < tau_{i+1}` with `tau_i` not at its saturation point.
    Increasing { i: u32, tau: u32, next: u32 },
    /// The idle source does not send a new arrival at this AoI.
    IdleSkip { delta: u32 },
}

impl fmt::Display for ShapeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeViolation::Gap(c) => write!(f, "skip at (i={}, j={}) below a switch", c.i, c.j),
            ShapeViolation::Increasing { i, tau, next } => {
                write!(f, "tau_{i} = {tau} < tau_{} = {next}", i + 1)
            }
            ShapeViolation::IdleSkip { delta } => write!(f, "idle skip at delta={delta}"),
        }
    }
}

/// Per arrival slot `i`, the SWITCH set over epoch slots `j` in the window
/// `i < j <= i + d - 1` that lies strictly below the truncation boundary.
pub fn switch_windows(policy: &TabularPolicy) -> Vec<(u32, Vec<u32>)> {
    let params = &policy.params;
    let d = params.d;
    // epoch slot j has AoI d + j - 1, which must stay below delta_m
    let last_j = params.delta_m - d;
    (1..last_j)
        .map(|i| {
            let hi = (i + d - 1).min(last_j);
            let js = (i + 1..=hi)
                .filter(|&j| {
                    let s = EpochCoords { i, j }.to_state(d, true);
                    policy.action(&s) == Action::Switch
                })
                .collect();
            (i, js)
        })
        .collect()
}

/// Reads the multi-threshold representation off a solved table.
///
/// `tau_i` is the last epoch slot `j` at which an arrival preempts the update
/// that arrived in slot `i`; `K` is the last `i` with any preemption. A
/// threshold that reaches `i + d - 1`, the last slot before that update
/// would complete, is saturated: any larger value describes the same
/// policy, so it is raised to the following threshold when needed to keep
/// the sequence non-increasing.
///
/// Fails with the list of offending coordinates when, for some `i`, the
/// SWITCH slots are not a contiguous run starting at `i + 1`, when the
/// thresholds increase, or when an idle source skips an arrival.
pub fn extract_thresholds(policy: &TabularPolicy) -> Result<ThresholdPolicy, Vec<ShapeViolation>> {
    let params = &policy.params;
    let d = params.d;
    let mut violations = Vec::new();

    for delta in d..params.delta_m {
        if policy.action(&crate::types::State::new(delta, 0, true)) == Action::Skip {
            violations.push(ShapeViolation::IdleSkip { delta });
        }
    }

    let mut raw = Vec::new();
    for (i, js) in switch_windows(policy) {
        let tau = js.last().copied().unwrap_or(i);
        for j in i + 1..tau {
            if !js.contains(&j) {
                violations.push(ShapeViolation::Gap(EpochCoords { i, j }));
            }
        }
        raw.push(tau);
    }

    let k = raw
        .iter()
        .enumerate()
        .filter(|(idx, &t)| t as usize > idx + 1)
        .map(|(idx, _)| idx + 1)
        .next_back()
        .unwrap_or(0);
    let mut tau: Vec<u32> = raw[..k].to_vec();

    for idx in (0..k.saturating_sub(1)).rev() {
        let i = idx as u32 + 1;
        let saturated = tau[idx] == i + d - 1;
        if tau[idx] < tau[idx + 1] {
            if saturated {
                tau[idx] = tau[idx + 1];
            } else {
                violations.push(ShapeViolation::Increasing {
                    i,
                    tau: tau[idx],
                    next: tau[idx + 1],
                });
            }
        }
    }

    if !violations.is_empty() {
        return Err(violations);
    }
    Ok(ThresholdPolicy::new(*params, tau).expect("shape checked above"))
}
