//! Truncated average-cost MDP: transition kernel and cost, plain and
//! structured relative value iteration, an exact policy evaluator, and
//! extraction of the multi-threshold form of a solved policy.

mod evaluate;
mod extract;
mod kernel;
mod solve;

use thiserror::Error;

use crate::types::{ParamError, State};

pub use evaluate::{evaluate_stationary, stationary_distribution};
pub use extract::{extract_thresholds, switch_windows, ShapeViolation};
pub use kernel::{cost, transitions, Transition};
pub use solve::{solve_rvi, solve_structured, IterationRecord, Solution, SolveConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("SWITCH is not a legal action in state {state} (no arrival)")]
    IllegalAction { state: State },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("relative value iteration did not converge in {iterations} sweeps (last span {span:.3e}); check delta_m and tol")]
    NotConverged { iterations: usize, span: f64 },
    #[error(
        "policy induces a chain that never completes a transmission from the truncation boundary"
    )]
    Reducible,
}
