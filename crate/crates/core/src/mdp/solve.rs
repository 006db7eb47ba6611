use serde::Serialize;

use crate::types::{Action, Params, State, TabularPolicy};

use super::kernel::CompiledKernel;
use super::MdpError;

/// Stopping rule and iteration knobs shared by both solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Stop once the span (max - min) of the Bellman residual drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Defaults to `(d, 0, 0)`.
    pub reference_state: Option<State>,
    /// Step size `t` in `V <- V + t (T V - V)`. Any value in `(0, 1]` has the
    /// same fixed point; values below 1 make the iteration aperiodic, which
    /// is required at `p = 1` (deterministic epochs) and speeds it up a lot
    /// when `p` is close to 1.
    pub step: f64,
    /// Keep one [`IterationRecord`] per sweep.
    pub record_trace: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol: 1e-9,
            max_iters: 100_000,
            reference_state: None,
            step: 0.5,
            record_trace: false,
        }
    }
}

impl SolveConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolveConfig {
            tol,
            ..SolveConfig::default()
        }
    }

    fn validate(&self, params: &Params) -> Result<State, MdpError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(MdpError::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(MdpError::InvalidConfig(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(MdpError::InvalidConfig(format!(
                "step must lie in (0, 1], got {}",
                self.step
            )));
        }
        let s0 = self
            .reference_state
            .unwrap_or_else(|| params.reference_state());
        s0.check(params)?;
        Ok(s0)
    }
}

/// Diagnostics for one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Span of `T V - V`.
    pub span: f64,
    /// Sup-norm of the change in relative values.
    pub sup_change: f64,
    /// `(T V)(s0) - V(s0)`, the running average-cost estimate.
    pub drift: f64,
}

/// Solver output: the policy plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub policy: TabularPolicy,
    pub iterations: usize,
    pub span: f64,
    /// Number of explicit two-action minimizations performed.
    pub minimizations: u64,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SweepRule {
    Plain,
    Structured,
}

/// Relative value iteration over the full truncated space.
///
/// Each sweep takes the minimum over legal actions at every state; ties go
/// to SKIP. `avg_cost` is the one-step drift at the reference state when the
/// residual span falls below `cfg.tol`.
pub fn solve_rvi(params: &Params, cfg: &SolveConfig) -> Result<Solution, MdpError> {
    iterate(params, cfg, SweepRule::Plain)
}

/// Relative value iteration that skips the minimization where the
/// multi-threshold structure already determines the action.
///
/// States are swept in increasing AoI and, within a level, increasing
/// in-service age. For a state with an arrival:
/// * if a lower AoI with the same in-service age chose SKIP in this sweep,
///   SKIP is taken;
/// * else if a smaller non-zero in-service age at the same AoI chose SWITCH
///   in this sweep, SWITCH is taken;
/// * otherwise both actions are compared as in [`solve_rvi`].
///
/// States without an arrival always SKIP.
pub fn solve_structured(params: &Params, cfg: &SolveConfig) -> Result<Solution, MdpError> {
    iterate(params, cfg, SweepRule::Structured)
}

fn iterate(params: &Params, cfg: &SolveConfig, rule: SweepRule) -> Result<Solution, MdpError> {
    params.validate()?;
    let s0 = cfg.validate(params)?;
    let kernel = CompiledKernel::new(params);
    let n = params.num_states();
    let r = params.index(&s0).expect("validated reference state");

    let mut values = vec![0.0; n];
    let mut backup = vec![0.0; n];
    let mut actions = vec![Action::Skip; n];
    let mut trace = Vec::new();
    let mut minimizations = 0u64;
    let mut span = f64::INFINITY;

    for iter in 1..=cfg.max_iters {
        minimizations += match rule {
            SweepRule::Plain => sweep_plain(&kernel, &values, &mut backup, &mut actions),
            SweepRule::Structured => sweep_structured(&kernel, &values, &mut backup, &mut actions),
        };

        let drift = backup[r] - values[r];
        let (lo, hi) = backup
            .iter()
            .zip(&values)
            .map(|(b, v)| b - v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            });
        span = hi - lo;

        if span < cfg.tol {
            if cfg.record_trace {
                trace.push(IterationRecord {
                    iter,
                    span,
                    sup_change: 0.0,
                    drift,
                });
            }
            let policy = TabularPolicy::new(*params, actions, values, drift)
                .expect("solver produces legal, full-size tables");
            return Ok(Solution {
                policy,
                iterations: iter,
                span,
                minimizations,
                trace,
            });
        }

        // V <- V + t (TV - V), renormalized so that V(s0) = 0
        let shift = cfg.step * (backup[r] - values[r]);
        let mut sup_change = 0.0f64;
        for (v, b) in values.iter_mut().zip(&backup) {
            let next = *v + cfg.step * (b - *v) - shift;
            sup_change = sup_change.max((next - *v).abs());
            *v = next;
        }
        values[r] = 0.0;
        if cfg.record_trace {
            trace.push(IterationRecord {
                iter,
                span,
                sup_change,
                drift,
            });
        }
        if !span.is_finite() {
            break;
        }
    }
    Err(MdpError::NotConverged {
        iterations: cfg.max_iters,
        span,
    })
}

fn sweep_plain(
    kernel: &CompiledKernel,
    values: &[f64],
    backup: &mut [f64],
    actions: &mut [Action],
) -> u64 {
    let mut mins = 0;
    for idx in 0..values.len() {
        let q_skip = kernel.q(kernel.skip[idx], values);
        if idx % 2 == 1 {
            mins += 1;
            let q_switch = kernel.q(kernel.switch[idx], values);
            if q_switch < q_skip {
                backup[idx] = q_switch;
                actions[idx] = Action::Switch;
                continue;
            }
        }
        backup[idx] = q_skip;
        actions[idx] = Action::Skip;
    }
    mins
}

fn sweep_structured(
    kernel: &CompiledKernel,
    values: &[f64],
    backup: &mut [f64],
    actions: &mut [Action],
) -> u64 {
    let params = &kernel.params;
    let d = params.d as usize;
    let mut skip_seen = vec![false; d];
    let mut mins = 0;
    for level in 0..params.levels() {
        let mut busy_switch_seen = false;
        for (l, skipped_below) in skip_seen.iter_mut().enumerate() {
            let base = (level * d + l) * 2;
            backup[base] = kernel.q(kernel.skip[base], values);
            actions[base] = Action::Skip;

            let idx = base + 1;
            let act = if *skipped_below {
                Action::Skip
            } else if l >= 1 && busy_switch_seen {
                Action::Switch
            } else {
                mins += 1;
                let q_skip = kernel.q(kernel.skip[idx], values);
                let q_switch = kernel.q(kernel.switch[idx], values);
                if q_switch < q_skip {
                    Action::Switch
                } else {
                    Action::Skip
                }
            };
            match act {
                Action::Skip => *skipped_below = true,
                Action::Switch if l >= 1 => busy_switch_seen = true,
                Action::Switch => {}
            }
            backup[idx] = kernel.q(kernel.edge(idx, act), values);
            actions[idx] = act;
        }
    }
    mins
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::evaluate_stationary;

    fn params(p: f64, d: u32, delta_m: u32) -> Params {
        Params::new(p, d, delta_m).unwrap()
    }

    #[test]
    fn deterministic_arrivals_never_preempt() {
        // X = d always; per-slot AoI over an epoch is (d+1) + ... + (2d-1) + d
        let p = params(1.0, 2, 50);
        let sol = solve_rvi(&p, &SolveConfig::default()).unwrap();
        assert!(
            (sol.policy.avg_cost - 2.5).abs() < 1e-8,
            "{}",
            sol.policy.avg_cost
        );
        for delta in 2..50 {
            assert_eq!(sol.policy.action(&State::new(delta, 1, true)), Action::Skip);
        }
    }

    #[test]
    fn step_one_cannot_converge_on_periodic_chain() {
        let p = params(1.0, 2, 20);
        let cfg = SolveConfig {
            step: 1.0,
            max_iters: 2_000,
            ..SolveConfig::default()
        };
        match solve_rvi(&p, &cfg) {
            Err(MdpError::NotConverged { iterations, span }) => {
                assert_eq!(iterations, 2_000);
                assert!(span > 0.1);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn step_does_not_change_the_answer() {
        let p = params(0.3, 4, 60);
        let a = solve_rvi(&p, &SolveConfig::default()).unwrap();
        let b = solve_rvi(
            &p,
            &SolveConfig {
                step: 1.0,
                ..SolveConfig::default()
            },
        )
        .unwrap();
        assert!(a.policy.same_actions(&b.policy));
        assert!((a.policy.avg_cost - b.policy.avg_cost).abs() < 1e-8);
    }

    #[test]
    fn matches_policy_evaluation() {
        let p = params(0.5, 2, 100);
        let sol = solve_rvi(&p, &SolveConfig::default()).unwrap();
        let exact = evaluate_stationary(&sol.policy).unwrap();
        assert!((sol.policy.avg_cost - exact).abs() < 1e-6);
    }

    #[test]
    fn idle_arrivals_are_always_sent() {
        for (p, d) in [(0.07, 10), (0.5, 3), (0.9, 5)] {
            let params = Params::with_default_truncation(p, d).unwrap();
            let sol = solve_structured(&params, &SolveConfig::default()).unwrap();
            for delta in d..params.delta_m {
                assert_eq!(
                    sol.policy.action(&State::new(delta, 0, true)),
                    Action::Switch
                );
            }
        }
    }

    #[test]
    fn no_arrival_means_skip() {
        let p = params(0.3, 4, 80);
        for sol in [
            solve_rvi(&p, &SolveConfig::default()).unwrap(),
            solve_structured(&p, &SolveConfig::default()).unwrap(),
        ] {
            assert!(p
                .states()
                .filter(|s| !s.arrival)
                .all(|s| sol.policy.action(&s) == Action::Skip));
        }
    }

    #[test]
    fn structured_agrees_with_plain() {
        let p = params(0.3, 4, 80);
        let plain = solve_rvi(&p, &SolveConfig::default()).unwrap();
        let fast = solve_structured(&p, &SolveConfig::default()).unwrap();
        assert_eq!(plain.policy.diff(&fast.policy), vec![]);
        assert!((plain.policy.avg_cost - fast.policy.avg_cost).abs() < 1e-8);
        assert!(fast.minimizations < plain.minimizations);
    }

    #[test]
    fn non_convergence_is_reported() {
        let p = params(0.07, 10, 200);
        let cfg = SolveConfig {
            max_iters: 5,
            ..SolveConfig::default()
        };
        assert!(matches!(
            solve_structured(&p, &cfg),
            Err(MdpError::NotConverged { iterations: 5, .. })
        ));
    }

    #[test]
    fn config_is_validated() {
        let p = params(0.3, 4, 80);
        for cfg in [
            SolveConfig::with_tol(0.0),
            SolveConfig::with_tol(f64::NAN),
            SolveConfig {
                step: 0.0,
                ..SolveConfig::default()
            },
            SolveConfig {
                reference_state: Some(State::new(3, 0, false)),
                ..SolveConfig::default()
            },
        ] {
            assert!(solve_rvi(&p, &cfg).is_err());
        }
    }

    #[test]
    fn trace_is_recorded_and_reference_value_is_zero() {
        let p = params(0.3, 4, 40);
        let cfg = SolveConfig {
            record_trace: true,
            ..SolveConfig::default()
        };
        let sol = solve_rvi(&p, &cfg).unwrap();
        assert_eq!(sol.trace.len(), sol.iterations);
        assert!(sol.trace.last().unwrap().span < 1e-9);
        assert_eq!(sol.policy.value(&p.reference_state()), Some(0.0));
    }

    #[test]
    fn solves_are_bit_identical() {
        let p = params(0.2, 5, 60);
        let a = solve_structured(&p, &SolveConfig::default()).unwrap();
        let b = solve_structured(&p, &SolveConfig::default()).unwrap();
        assert_eq!(a.policy.avg_cost.to_bits(), b.policy.avg_cost.to_bits());
        assert_eq!(a.policy.values(), b.policy.values());
        assert_eq!(a.policy.actions(), b.policy.actions());
    }
}
