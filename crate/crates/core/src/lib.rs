//! Scheduling of status updates over a link where every transmission takes
//! `d` slots and updates arrive as a Bernoulli process. On each arrival the
//! source either keeps the update in service or switches to the new one.
//!
//! [`mdp`] solves the truncated average-cost MDP for the age-optimal policy,
//! [`renewal`] evaluates threshold policies exactly, and [`sim`] checks both
//! by simulation.

pub mod mdp;
mod numeric;
pub mod policies;
pub mod renewal;
pub mod sim;
pub mod types;

pub use mdp::{solve_rvi, solve_structured, MdpError, Solution, SolveConfig};
pub use policies::{PolicyKind, PolicySpec};
pub use renewal::EpochStats;
pub use sim::{simulate, SimConfig, SimReport};
pub use types::{
    default_delta_m, epoch_coords, Action, EpochCoords, ParamError, Params, State, TabularPolicy,
    ThresholdPolicy,
};
