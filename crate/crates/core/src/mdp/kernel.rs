use crate::types::{Action, Params, State};

use super::MdpError;

/// One successor of a (state, action) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: State,
    pub prob: f64,
}

/// Successor distribution of `s` under `act` in the truncated MDP.
///
/// The AoI grows by one slot (clamped to `delta_m`) unless the transmission
/// completes, in which case it resets to `d`. SKIP continues the unfinished
/// update (or idles); SWITCH starts the new arrival. The next arrival flag is
/// 1 with probability `p`, so there are always exactly two successors,
/// listed as `[no arrival, arrival]`.
pub fn transitions(s: &State, act: Action, params: &Params) -> Result<[Transition; 2], MdpError> {
    check_legal(s, act, params)?;
    let (delta, l) = successor_core(s, act, params);
    Ok([
        Transition {
            next: State::new(delta, l, false),
            prob: 1.0 - params.p,
        },
        Transition {
            next: State::new(delta, l, true),
            prob: params.p,
        },
    ])
}

/// Immediate cost: the AoI right after the action is taken. A completing
/// slot costs `d`; every other slot costs `delta + 1`.
pub fn cost(s: &State, act: Action, params: &Params) -> Result<f64, MdpError> {
    check_legal(s, act, params)?;
    Ok(cost_unchecked(s, act, params.d))
}

pub(crate) fn cost_unchecked(s: &State, act: Action, d: u32) -> f64 {
    if completes(s, act, d) {
        d as f64
    } else {
        (s.delta + 1) as f64
    }
}

pub(crate) fn completes(s: &State, act: Action, d: u32) -> bool {
    s.l == d - 1 && act == Action::Skip
}

/// `(delta', l')` of the successor, shared by both arrival outcomes.
pub(crate) fn successor_core(s: &State, act: Action, params: &Params) -> (u32, u32) {
    let d = params.d;
    let grown = (s.delta + 1).min(params.delta_m);
    match act {
        Action::Switch => (grown, 1),
        Action::Skip if s.l == 0 => (grown, 0),
        Action::Skip if s.l == d - 1 => (d, 0),
        Action::Skip => (grown, s.l + 1),
    }
}

fn check_legal(s: &State, act: Action, params: &Params) -> Result<(), MdpError> {
    s.check(params)?;
    if !act.is_legal(s) {
        return Err(MdpError::IllegalAction { state: *s });
    }
    Ok(())
}

/// Dense, index-based form of the kernel used by the solvers and the
/// policy evaluator. For each state and action it stores the cost and the
/// index of the no-arrival successor; the arrival successor is the next
/// index.
#[derive(Debug, Clone)]
pub(crate) struct CompiledKernel {
    pub params: Params,
    pub skip: Vec<Edge>,
    /// Meaningful only at states with an arrival.
    pub switch: Vec<Edge>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Edge {
    pub cost: f64,
    pub base: usize,
}

impl CompiledKernel {
    pub fn new(params: &Params) -> Self {
        let n = params.num_states();
        let mut skip = Vec::with_capacity(n);
        let mut switch = Vec::with_capacity(n);
        let edge = |s: &State, act: Action| {
            let [no_arrival, _] = transitions(s, act, params).expect("legal action");
            Edge {
                cost: cost_unchecked(s, act, params.d),
                base: params.index(&no_arrival.next).expect("successor in range"),
            }
        };
        for s in params.states() {
            skip.push(edge(&s, Action::Skip));
            let sw = if s.arrival {
                edge(&s, Action::Switch)
            } else {
                // placeholder never read: SWITCH is illegal without an arrival
                Edge {
                    cost: f64::NAN,
                    base: 0,
                }
            };
            switch.push(sw);
        }
        CompiledKernel {
            params: *params,
            skip,
            switch,
        }
    }

    pub fn edge(&self, idx: usize, act: Action) -> Edge {
        match act {
            Action::Skip => self.skip[idx],
            Action::Switch => self.switch[idx],
        }
    }

    /// `cost + E[V(next)]` for one edge.
    #[inline]
    pub fn q(&self, e: Edge, values: &[f64]) -> f64 {
        let p = self.params.p;
        e.cost + (1.0 - p) * values[e.base] + p * values[e.base + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(p: f64, d: u32, delta_m: u32) -> Params {
        Params::new(p, d, delta_m).unwrap()
    }

    fn succ(s: State, act: Action, p: &Params) -> Vec<(State, f64)> {
        transitions(&s, act, p)
            .unwrap()
            .iter()
            .map(|t| (t.next, t.prob))
            .collect()
    }

    #[test]
    fn idle_switch_starts_transmission() {
        let p = params(0.3, 10, 60);
        assert_eq!(
            succ(State::new(20, 0, true), Action::Switch, &p),
            vec![
                (State::new(21, 1, false), 0.7),
                (State::new(21, 1, true), 0.3)
            ]
        );
    }

    #[test]
    fn last_slot_skip_completes() {
        let p = params(0.3, 10, 60);
        assert_eq!(
            succ(State::new(33, 9, false), Action::Skip, &p),
            vec![
                (State::new(10, 0, false), 0.7),
                (State::new(10, 0, true), 0.3)
            ]
        );
    }

    #[test]
    fn boundary_clamps() {
        let p = params(0.3, 10, 60);
        assert_eq!(
            succ(State::new(60, 0, false), Action::Skip, &p),
            vec![
                (State::new(60, 0, false), 0.7),
                (State::new(60, 0, true), 0.3)
            ]
        );
        assert_eq!(
            succ(State::new(60, 9, true), Action::Switch, &p)[1].0,
            State::new(60, 1, true)
        );
    }

    #[test]
    fn busy_skip_continues_and_switch_restarts() {
        let p = params(0.3, 10, 60);
        assert_eq!(
            succ(State::new(20, 4, true), Action::Skip, &p)[0].0,
            State::new(21, 5, false)
        );
        assert_eq!(
            succ(State::new(20, 4, true), Action::Switch, &p)[0].0,
            State::new(21, 1, false)
        );
        // dropping an almost-finished update does not complete it
        assert_eq!(
            succ(State::new(20, 9, true), Action::Switch, &p)[0].0,
            State::new(21, 1, false)
        );
    }

    #[test]
    fn illegal_switch_is_rejected() {
        let p = params(0.3, 10, 60);
        assert!(matches!(
            transitions(&State::new(20, 4, false), Action::Switch, &p),
            Err(MdpError::IllegalAction { .. })
        ));
        assert!(cost(&State::new(20, 4, false), Action::Switch, &p).is_err());
        assert!(transitions(&State::new(9, 0, false), Action::Skip, &p).is_err());
    }

    #[test]
    fn cost_examples() {
        let p = params(0.3, 10, 60);
        assert_eq!(
            cost(&State::new(15, 9, false), Action::Skip, &p).unwrap(),
            10.0
        );
        assert_eq!(
            cost(&State::new(15, 3, true), Action::Switch, &p).unwrap(),
            16.0
        );
        assert_eq!(
            cost(&State::new(15, 9, true), Action::Switch, &p).unwrap(),
            16.0
        );
        let p2 = params(0.5, 2, 20);
        assert_eq!(
            cost(&State::new(2, 0, false), Action::Skip, &p2).unwrap(),
            3.0
        );
        // cost is not clamped at the boundary
        assert_eq!(
            cost(&State::new(20, 0, false), Action::Skip, &p2).unwrap(),
            21.0
        );
    }

    #[test]
    fn compiled_matches_transitions() {
        let p = params(0.37, 4, 30);
        let k = CompiledKernel::new(&p);
        for (idx, s) in p.states().enumerate() {
            for act in [Action::Skip, Action::Switch] {
                if !act.is_legal(&s) {
                    continue;
                }
                let t = transitions(&s, act, &p).unwrap();
                let e = k.edge(idx, act);
                assert_eq!(p.state_at(e.base), t[0].next);
                assert_eq!(p.state_at(e.base + 1), t[1].next);
                assert_eq!(e.cost, cost(&s, act, &p).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn kernel_is_stochastic(
            p in prop_oneof![Just(0.5), Just(0.25), Just(1.0), 0.001f64..1.0],
            d in 2u32..12,
            extra in 1u32..40,
            delta_off in 0u32..60,
            l_raw in 0u32..12,
            arrival: bool,
            switch: bool,
        ) {
            let params = Params::new(p, d, d + extra).unwrap();
            let s = State::new(d + delta_off % (extra + 1), l_raw % d, arrival);
            let act = if switch && arrival { Action::Switch } else { Action::Skip };
            let t = transitions(&s, act, &params).unwrap();
            let total: f64 = t.iter().map(|t| t.prob).sum();
            if p == 0.5 || p == 0.25 || p == 1.0 {
                prop_assert_eq!(total, 1.0);
            } else {
                prop_assert!((total - 1.0).abs() <= f64::EPSILON);
            }
            for tr in &t {
                prop_assert!(tr.next.check(&params).is_ok());
                prop_assert!(tr.prob >= 0.0);
            }
        }
    }
}
