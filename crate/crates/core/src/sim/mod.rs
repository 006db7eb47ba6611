//! Slot-level Monte Carlo simulation of the source, link and destination.

mod sweep;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policies::PolicyKind;
use crate::types::{Action, EpochCoords, ParamError, Params, State};

pub use sweep::{sweep, ExactRow, SweepConfig, SweepPolicy, SweepRow};

/// Name of the generator behind every simulated arrival path.
pub const RNG_NAME: &str = "ChaCha8Rng";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("horizon must be at least one slot")]
    EmptyHorizon,
    #[error("epoch cap {cap} must exceed d = {d}")]
    EpochCap { cap: u64, d: u32 },
    #[error("tabular policy was solved for {policy:?}, simulation uses {sim:?}")]
    ParamsMismatch { policy: Params, sim: Params },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// `delta_m` only matters for tabular policies, whose lookups clamp AoI.
    pub params: Params,
    pub horizon: u64,
    pub seed: u64,
    /// Epochs running longer than this many slots are censored: they still
    /// count towards the time average but not towards the epoch moments.
    pub epoch_cap: u64,
}

impl SimConfig {
    pub fn new(params: Params, horizon: u64, seed: u64) -> Self {
        SimConfig {
            params,
            horizon,
            seed,
            epoch_cap: default_epoch_cap(&params),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if self.horizon == 0 {
            return Err(SimError::EmptyHorizon);
        }
        if self.epoch_cap <= self.params.d as u64 {
            return Err(SimError::EpochCap {
                cap: self.epoch_cap,
                d: self.params.d,
            });
        }
        Ok(())
    }
}

/// A hundred mean myopic epochs, at least `1000 d`.
pub fn default_epoch_cap(params: &Params) -> u64 {
    let mean = 1.0 / params.p + (params.d - 1) as f64;
    ((100.0 * mean).ceil() as u64).max(1000 * params.d as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Time-average AoI over the horizon, summing the post-action AoI of
    /// each slot.
    pub avg_aoi: f64,
    /// Completed, uncensored epochs.
    pub n_epochs: u64,
    /// Empirical `E[X]` and `E[X^2]` over those epochs (0 when there are none).
    pub emp_mean_x: f64,
    pub emp_mean_x2: f64,
    pub censored: u64,
    /// Ratio-estimator standard error of the time average, from per-epoch
    /// AoI sums. Absent with fewer than two epochs.
    pub std_error: Option<f64>,
    pub rng: String,
}

/// Runs `kind` for `cfg.horizon` slots from an idle link with AoI `d`.
///
/// One uniform draw per slot decides the arrival, so two policies run with
/// the same seed see the same arrival path.
pub fn simulate(kind: &PolicyKind, cfg: &SimConfig) -> Result<SimReport, SimError> {
    cfg.validate()?;
    if let PolicyKind::Tabular(tab) = kind {
        if tab.params != cfg.params {
            return Err(SimError::ParamsMismatch {
                policy: tab.params,
                sim: cfg.params,
            });
        }
    }
    let p = cfg.params.p;
    let d = cfg.params.d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut delta = d as u64;
    let mut l = 0u32;
    // epoch slot of the current slot, and of the arrival in service
    let mut j = 1u64;
    let mut i = 0u64;
    let mut total = 0u64;
    let mut epoch_area = 0u64;
    let mut censored_now = false;
    let mut censored = 0u64;
    let mut epochs: Vec<(u64, u64)> = Vec::new();

    for _ in 0..cfg.horizon {
        let arrival = rng.random::<f64>() < p;
        // Tabular lookups clamp AoI themselves; the u32 cast only needs to
        // survive runs where AoI outgrows u32, which no policy reaches.
        let state = State::new(delta.min(u32::MAX as u64) as u32, l, arrival);
        let coords = (l > 0).then_some(EpochCoords {
            i: i as u32,
            j: j as u32,
        });
        let act = kind.decide_at(&state, coords);
        debug_assert!(act.is_legal(&state));

        let done = act == Action::Skip && l == d - 1;
        let cost = if done { d as u64 } else { delta + 1 };
        total += cost;
        epoch_area += cost;

        if done {
            if !censored_now {
                epochs.push((epoch_area, j));
            }
            delta = d as u64;
            l = 0;
            j = 1;
            epoch_area = 0;
            censored_now = false;
            continue;
        }
        match act {
            Action::Switch => {
                i = j;
                l = 1;
            }
            Action::Skip if l > 0 => l += 1,
            Action::Skip => {}
        }
        delta += 1;
        j += 1;
        if j > cfg.epoch_cap && !censored_now {
            censored_now = true;
            censored += 1;
        }
    }

    Ok(report(total, cfg.horizon, &epochs, censored))
}

fn report(total: u64, horizon: u64, epochs: &[(u64, u64)], censored: u64) -> SimReport {
    let n = epochs.len() as u64;
    let (mut sx, mut sx2, mut sr) = (0u128, 0u128, 0u128);
    for &(r, x) in epochs {
        sx += x as u128;
        sx2 += (x as u128) * (x as u128);
        sr += r as u128;
    }
    let (emp_mean_x, emp_mean_x2) = if n == 0 {
        (0.0, 0.0)
    } else {
        (sx as f64 / n as f64, sx2 as f64 / n as f64)
    };
    let std_error = (n >= 2).then(|| {
        let ratio = sr as f64 / sx as f64;
        let ss: f64 = epochs
            .iter()
            .map(|&(r, x)| {
                let e = r as f64 - ratio * x as f64;
                e * e
            })
            .sum();
        let var = ss / (n - 1) as f64;
        (var / n as f64).sqrt() / emp_mean_x
    });
    SimReport {
        avg_aoi: total as f64 / horizon as f64,
        n_epochs: n,
        emp_mean_x,
        emp_mean_x2,
        censored,
        std_error,
        rng: RNG_NAME.to_string(),
    }
}
