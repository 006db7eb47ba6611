//! Problem instance, MDP state/action, and the two policy representations
//! (dense tabular and compact multi-threshold) shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised when constructing or validating domain values.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("arrival probability must satisfy 0 < p <= 1, got {0}")]
    ArrivalProbability(f64),
    #[error("transmission duration must be at least 2 slots, got {0}")]
    Duration(u32),
    #[error("truncation bound delta_m = {delta_m} must exceed d = {d}")]
    Truncation { d: u32, delta_m: u32 },
    #[error(
        "state ({delta}, {l}, {a}) is outside the truncated space for d = {d}, delta_m = {delta_m}"
    )]
    StateOutOfRange {
        delta: u32,
        l: u32,
        a: u8,
        d: u32,
        delta_m: u32,
    },
    #[error("threshold list has {len} entries but K = {k}")]
    ThresholdLength { k: usize, len: usize },
    #[error("threshold tau_{i} = {tau} is below its arrival slot {i}")]
    ThresholdBelowSlot { i: usize, tau: u32 },
    #[error("thresholds must be non-increasing: tau_{i} = {prev} < tau_{next_i} = {next}", next_i = .i + 1)]
    ThresholdNotMonotone { i: usize, prev: u32, next: u32 },
    #[error("policy table has {got} entries, expected {expected}")]
    TableSize { expected: usize, got: usize },
    #[error("SWITCH assigned to state ({delta}, {l}, 0) without an arrival")]
    SwitchWithoutArrival { delta: u32, l: u32 },
}

/// A problem instance: Bernoulli arrival probability `p`, transmission length
/// `d` slots, and the AoI truncation bound `delta_m` of the approximate MDP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct Params {
    pub p: f64,
    pub d: u32,
    pub delta_m: u32,
}

#[derive(Deserialize)]
struct RawParams {
    p: f64,
    d: u32,
    delta_m: u32,
}

impl TryFrom<RawParams> for Params {
    type Error = ParamError;

    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        Params::new(raw.p, raw.d, raw.delta_m)
    }
}

impl Params {
    pub fn new(p: f64, d: u32, delta_m: u32) -> Result<Self, ParamError> {
        let params = Params { p, d, delta_m };
        params.validate()?;
        Ok(params)
    }

    /// Instance with the default truncation `max(10 d, ceil(4 / p) + d)`.
    pub fn with_default_truncation(p: f64, d: u32) -> Result<Self, ParamError> {
        check_pd(p, d)?;
        Params::new(p, d, default_delta_m(p, d))
    }

    /// Instance whose truncation leaves less than `eps` probability that an
    /// epoch ever reaches the boundary under any policy that stops switching
    /// within a few transmission lengths. Used when truncated evaluations are
    /// compared against untruncated ones at tight tolerances.
    pub fn with_tail_truncation(p: f64, d: u32, eps: f64) -> Result<Self, ParamError> {
        check_pd(p, d)?;
        let tail = if p >= 1.0 {
            0
        } else {
            (eps.ln() / (1.0 - p).ln()).ceil().max(0.0) as u32
        };
        let delta_m = default_delta_m(p, d).max(tail + 4 * d);
        Params::new(p, d, delta_m)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check_pd(self.p, self.d)?;
        if self.delta_m <= self.d {
            return Err(ParamError::Truncation {
                d: self.d,
                delta_m: self.delta_m,
            });
        }
        Ok(())
    }

    /// Number of AoI levels `d..=delta_m` in the truncated space.
    pub fn levels(&self) -> usize {
        (self.delta_m - self.d + 1) as usize
    }

    /// Total number of states in the truncated space.
    pub fn num_states(&self) -> usize {
        self.levels() * self.d as usize * 2
    }

    /// The reference state `(d, 0, 0)` used for relative value iteration.
    pub fn reference_state(&self) -> State {
        State::new(self.d, 0, false)
    }

    /// Dense index of `s` in the truncated space, after clamping its AoI to
    /// `delta_m`. Returns `None` when `delta < d` or `l >= d`.
    pub fn index(&self, s: &State) -> Option<usize> {
        if s.delta < self.d || s.l >= self.d {
            return None;
        }
        let delta = s.delta.min(self.delta_m);
        let d = self.d as usize;
        Some((((delta - self.d) as usize) * d + s.l as usize) * 2 + s.arrival as usize)
    }

    /// Inverse of [`Params::index`].
    pub fn state_at(&self, idx: usize) -> State {
        let d = self.d as usize;
        let arrival = idx % 2 == 1;
        let rest = idx / 2;
        let l = (rest % d) as u32;
        let delta = (rest / d) as u32 + self.d;
        State { delta, l, arrival }
    }

    /// All states of the truncated space in index order.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.num_states()).map(move |i| self.state_at(i))
    }
}

fn check_pd(p: f64, d: u32) -> Result<(), ParamError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(ParamError::ArrivalProbability(p));
    }
    if d < 2 {
        return Err(ParamError::Duration(d));
    }
    Ok(())
}

/// `max(10 d, ceil(4 / p) + d)`.
pub fn default_delta_m(p: f64, d: u32) -> u32 {
    let by_rate = (4.0 / p).ceil() as u32 + d;
    (10 * d).max(by_rate)
}

/// MDP state at the beginning of a slot.
///
/// `delta` is the AoI at the destination, `l` the number of slots the
/// unfinished update has been in service (`0` means the link is idle), and
/// `arrival` whether a new update arrived at the start of this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub delta: u32,
    pub l: u32,
    pub arrival: bool,
}

impl State {
    pub const fn new(delta: u32, l: u32, arrival: bool) -> Self {
        State { delta, l, arrival }
    }

    pub fn is_idle(&self) -> bool {
        self.l == 0
    }

    /// Checks the state lies in the truncated space of `params`.
    pub fn check(&self, params: &Params) -> Result<(), ParamError> {
        if self.delta < params.d || self.delta > params.delta_m || self.l >= params.d {
            return Err(ParamError::StateOutOfRange {
                delta: self.delta,
                l: self.l,
                a: self.arrival as u8,
                d: params.d,
                delta_m: params.delta_m,
            });
        }
        Ok(())
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.delta, self.l, self.arrival as u8)
    }
}

/// Per-slot decision of the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    /// Ignore any new arrival: keep transmitting the unfinished update, or
    /// stay idle. At `l = d - 1` this completes the transmission.
    Skip,
    /// Drop the unfinished update (if any) and start sending the new arrival.
    Switch,
}

impl Action {
    pub fn is_legal(self, s: &State) -> bool {
        self == Action::Skip || s.arrival
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Skip => "skip",
            Action::Switch => "switch",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Position inside a renewal epoch: the update in service arrived in epoch
/// slot `i`, and the current slot is epoch slot `j` (both 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EpochCoords {
    pub i: u32,
    pub j: u32,
}

impl EpochCoords {
    /// The MDP state (without arrival flag) at these coordinates:
    /// AoI `d + j - 1` and in-service age `j - i`.
    pub fn to_state(self, d: u32, arrival: bool) -> State {
        State::new(d + self.j - 1, self.j - self.i, arrival)
    }
}

/// Maps a busy state below the truncation boundary to epoch coordinates.
///
/// Within an epoch the AoI at relative slot `j` is `d + j - 1` and the
/// in-service age is `j - i`. Idle states, boundary states, and states whose
/// implied arrival slot would be `< 1` (unreachable) have no coordinates.
pub fn epoch_coords(s: &State, params: &Params) -> Option<EpochCoords> {
    if s.l == 0 || s.delta >= params.delta_m || s.delta < params.d {
        return None;
    }
    let j = s.delta - params.d + 1;
    if j <= s.l {
        return None;
    }
    Some(EpochCoords { i: j - s.l, j })
}

/// Optimal action for every state of the truncated space together with the
/// solver's average cost and relative values.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub params: Params,
    actions: Vec<Action>,
    /// Relative values indexed like `actions`; empty for policies loaded from
    /// JSON, which only carries the SWITCH set.
    values: Vec<f64>,
    pub avg_cost: f64,
}

impl TabularPolicy {
    pub fn new(
        params: Params,
        actions: Vec<Action>,
        values: Vec<f64>,
        avg_cost: f64,
    ) -> Result<Self, ParamError> {
        let n = params.num_states();
        if actions.len() != n {
            return Err(ParamError::TableSize {
                expected: n,
                got: actions.len(),
            });
        }
        if !values.is_empty() && values.len() != n {
            return Err(ParamError::TableSize {
                expected: n,
                got: values.len(),
            });
        }
        for (idx, act) in actions.iter().enumerate() {
            let s = params.state_at(idx);
            if !act.is_legal(&s) {
                return Err(ParamError::SwitchWithoutArrival {
                    delta: s.delta,
                    l: s.l,
                });
            }
        }
        Ok(TabularPolicy {
            params,
            actions,
            values,
            avg_cost,
        })
    }

    /// Builds a table by evaluating `rule` on every state; `avg_cost` is left
    /// as NaN until the policy is evaluated.
    pub fn from_fn(params: Params, rule: impl Fn(&State) -> Action) -> Result<Self, ParamError> {
        let actions = params.states().map(|s| rule(&s)).collect();
        TabularPolicy::new(params, actions, Vec::new(), f64::NAN)
    }

    /// The table's view of the never-switch policy.
    pub fn myopic(params: Params) -> Self {
        TabularPolicy::from_fn(params, |s| {
            if s.arrival && s.is_idle() {
                Action::Switch
            } else {
                Action::Skip
            }
        })
        .expect("myopic rule is legal")
    }

    /// Action at `s`; AoI above `delta_m` is clamped to the boundary.
    ///
    /// # Panics
    /// If `s.delta < d` or `s.l >= d`.
    pub fn action(&self, s: &State) -> Action {
        let idx = self
            .params
            .index(s)
            .unwrap_or_else(|| panic!("state {s} outside policy domain"));
        self.actions[idx]
    }

    pub fn value(&self, s: &State) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        self.params.index(s).map(|idx| self.values[idx])
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// States mapped to SWITCH, in index order.
    pub fn switch_states(&self) -> impl Iterator<Item = State> + '_ {
        self.actions
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Action::Switch)
            .map(|(idx, _)| self.params.state_at(idx))
    }

    pub fn same_actions(&self, other: &TabularPolicy) -> bool {
        self.params == other.params && self.actions == other.actions
    }

    /// States on which the two tables disagree.
    pub fn diff(&self, other: &TabularPolicy) -> Vec<State> {
        self.actions
            .iter()
            .zip(&other.actions)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(idx, _)| self.params.state_at(idx))
            .collect()
    }
}

/// On-disk form of [`TabularPolicy`]: only SWITCH states are listed, as
/// `[delta, l]` pairs (the arrival flag is always 1 for SWITCH).
#[derive(Serialize, Deserialize)]
struct TabularPolicyFile {
    #[serde(flatten)]
    params: Params,
    /// `null` for tables that were not produced by a solver.
    #[serde(default)]
    avg_cost: Option<f64>,
    switch: Vec<[u32; 2]>,
}

impl Serialize for TabularPolicy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TabularPolicyFile {
            params: self.params,
            avg_cost: self.avg_cost.is_finite().then_some(self.avg_cost),
            switch: self.switch_states().map(|s| [s.delta, s.l]).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TabularPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let file = TabularPolicyFile::deserialize(deserializer)?;
        let params = file.params;
        let mut actions = vec![Action::Skip; params.num_states()];
        for [delta, l] in file.switch {
            let s = State::new(delta, l, true);
            s.check(&params).map_err(D::Error::custom)?;
            let idx = params.index(&s).expect("checked state");
            actions[idx] = Action::Switch;
        }
        TabularPolicy::new(
            params,
            actions,
            Vec::new(),
            file.avg_cost.unwrap_or(f64::NAN),
        )
        .map_err(D::Error::custom)
    }
}

/// Compact multi-threshold policy.
///
/// While serving an update that arrived in epoch slot `i <= k`, a new
/// arrival in slot `j` is switched to iff `j <= tau[i - 1]`; updates that
/// arrived after slot `k` are always finished. An idle source always starts
/// sending a new arrival. `k = 0` with no thresholds is the myopic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdPolicyFile")]
pub struct ThresholdPolicy {
    #[serde(flatten)]
    pub params: Params,
    #[serde(rename = "K")]
    k: usize,
    tau: Vec<u32>,
}

#[derive(Deserialize)]
struct ThresholdPolicyFile {
    #[serde(flatten)]
    params: Params,
    #[serde(rename = "K")]
    k: usize,
    tau: Vec<u32>,
}

impl TryFrom<ThresholdPolicyFile> for ThresholdPolicy {
    type Error = ParamError;

    fn try_from(f: ThresholdPolicyFile) -> Result<Self, Self::Error> {
        if f.k != f.tau.len() {
            return Err(ParamError::ThresholdLength {
                k: f.k,
                len: f.tau.len(),
            });
        }
        ThresholdPolicy::new(f.params, f.tau)
    }
}

impl ThresholdPolicy {
    /// Validates `tau_i >= i` and `tau_1 >= tau_2 >= ...`; `K` is the length
    /// of `tau`.
    pub fn new(params: Params, tau: Vec<u32>) -> Result<Self, ParamError> {
        for (idx, &t) in tau.iter().enumerate() {
            let i = idx + 1;
            if (t as usize) < i {
                return Err(ParamError::ThresholdBelowSlot { i, tau: t });
            }
            if idx + 1 < tau.len() && tau[idx + 1] > t {
                return Err(ParamError::ThresholdNotMonotone {
                    i,
                    prev: t,
                    next: tau[idx + 1],
                });
            }
        }
        Ok(ThresholdPolicy {
            params,
            k: tau.len(),
            tau,
        })
    }

    pub fn myopic(params: Params) -> Self {
        ThresholdPolicy {
            params,
            k: 0,
            tau: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tau(&self) -> &[u32] {
        &self.tau
    }

    /// Threshold for in-service arrival slot `i`, if `1 <= i <= K`.
    pub fn threshold(&self, i: u32) -> Option<u32> {
        if i == 0 {
            return None;
        }
        self.tau.get(i as usize - 1).copied()
    }

    /// Whether a new arrival in epoch slot `j` preempts the update that
    /// arrived in slot `i`.
    pub fn switches(&self, coords: EpochCoords) -> bool {
        self.threshold(coords.i).is_some_and(|t| coords.j <= t)
    }

    pub fn is_myopic(&self) -> bool {
        self.tau
            .iter()
            .enumerate()
            .all(|(idx, &t)| t as usize <= idx + 1)
    }
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tau: Vec<String> = self.tau.iter().map(u32::to_string).collect();
        write!(f, "K={} tau={}", self.k, tau.join(","))
    }
}
