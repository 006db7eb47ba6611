//! Policy comparison over a grid of arrival probabilities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mdp::{evaluate_stationary, extract_thresholds, solve_structured, SolveConfig};
use crate::policies::PolicyKind;
use crate::renewal::{
    eval_threshold_exact, eval_threshold_recursive, myopic_closed_form, RenewalError,
};
use crate::types::{Params, TabularPolicy, ThresholdPolicy};

use super::{default_epoch_cap, simulate, SimConfig, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepPolicy {
    Myopic,
    AlwaysSwitch,
    /// The solved MDP policy at each grid point.
    Optimal,
}

impl SweepPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepPolicy::Myopic => "myopic",
            SweepPolicy::AlwaysSwitch => "always-switch",
            SweepPolicy::Optimal => "optimal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub policies: Vec<SweepPolicy>,
    pub p_grid: Vec<f64>,
    pub d: u32,
    pub horizon: u64,
    pub seed: u64,
    /// Truncation for the solver; per-point default when absent.
    pub delta_m: Option<u32>,
    pub tol: f64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl SweepConfig {
    pub fn new(p_grid: Vec<f64>, d: u32, horizon: u64, seed: u64) -> Self {
        SweepConfig {
            policies: vec![SweepPolicy::Myopic, SweepPolicy::Optimal],
            p_grid,
            d,
            horizon,
            seed,
            delta_m: None,
            tol: 1e-9,
            jobs: 0,
        }
    }
}

/// One simulated (p, policy) cell. Numeric fields are empty when the cell
/// failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub policy: String,
    pub avg_aoi: Option<f64>,
    /// Myopic minus this policy, on the same arrival path.
    pub gap_vs_myopic: Option<f64>,
    pub n_epochs: Option<u64>,
    pub censored: Option<u64>,
}

/// Exact counterpart of a [`SweepRow`], in the per-slot convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRow {
    pub p: f64,
    pub policy: String,
    pub avg_aoi: Option<f64>,
    pub gap_vs_myopic: Option<f64>,
    /// `renewal`, `recursion`, `stationary`, or `failed: <reason>`.
    pub method: String,
    /// Extracted `K` and thresholds for the optimal policy.
    pub thresholds: Option<String>,
}

/// Solves, simulates and evaluates every policy at every grid point.
///
/// Each grid point gets its own seed, derived from `cfg.seed` and the
/// point's position, and all policies at that point share it, so their
/// gaps are measured on a common arrival path. Rows come back in grid
/// order whatever the thread count. A point whose solve fails keeps its
/// myopic rows and gets empty optimal rows.
pub fn sweep(cfg: &SweepConfig) -> Result<(Vec<SweepRow>, Vec<ExactRow>), SimError> {
    for &p in &cfg.p_grid {
        Params::with_default_truncation(p, cfg.d)?;
    }
    if cfg.horizon == 0 {
        return Err(SimError::EmptyHorizon);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .expect("thread pool");
    let cells: Vec<_> = pool.install(|| {
        cfg.p_grid
            .par_iter()
            .enumerate()
            .map(|(idx, &p)| cell(cfg, idx as u64, p))
            .collect()
    });
    let mut sim_rows = Vec::new();
    let mut exact_rows = Vec::new();
    for c in cells {
        let (s, e) = c?;
        sim_rows.extend(s);
        exact_rows.extend(e);
    }
    Ok((sim_rows, exact_rows))
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn cell_seed(seed: u64, idx: u64) -> u64 {
    mix(seed ^ mix(idx))
}

type Cell = Result<(Vec<SweepRow>, Vec<ExactRow>), SimError>;

fn cell(cfg: &SweepConfig, idx: u64, p: f64) -> Cell {
    let params = match cfg.delta_m {
        Some(m) => Params::new(p, cfg.d, m)?,
        None => Params::with_default_truncation(p, cfg.d)?,
    };
    let sim_cfg = SimConfig {
        params,
        horizon: cfg.horizon,
        seed: cell_seed(cfg.seed, idx),
        epoch_cap: default_epoch_cap(&params),
    };

    let solved = if cfg.policies.contains(&SweepPolicy::Optimal) {
        let solve_cfg = SolveConfig::with_tol(cfg.tol);
        Some(solve_structured(&params, &solve_cfg).map(|sol| {
            let tp = extract_thresholds(&sol.policy).ok();
            (sol.policy, tp)
        }))
    } else {
        None
    };
    if let Some(Err(e)) = &solved {
        log::warn!("p={p}: {e}");
    }

    let myopic = simulate(&PolicyKind::Myopic, &sim_cfg)?;
    let myopic_exact = myopic_closed_form(p, cfg.d)
        .map(|s| s.avg_aoi_per_slot)
        .expect("validated above");

    let mut sim_rows = Vec::new();
    let mut exact_rows = Vec::new();
    for &which in &cfg.policies {
        let name = which.as_str().to_string();
        let (sim, exact) = match which {
            SweepPolicy::Myopic => (Some(myopic.clone()), Ok((myopic_exact, "renewal", None))),
            SweepPolicy::AlwaysSwitch => (
                Some(simulate(&PolicyKind::AlwaysSwitch, &sim_cfg)?),
                Err("not evaluated".to_string()),
            ),
            SweepPolicy::Optimal => match solved.as_ref().expect("solved when listed") {
                Ok((tab, tp)) => (
                    Some(simulate(&PolicyKind::Tabular(tab.clone()), &sim_cfg)?),
                    exact_optimal(tab, tp.as_ref(), p, cfg.d),
                ),
                Err(e) => (None, Err(e.to_string())),
            },
        };
        sim_rows.push(SweepRow {
            p,
            policy: name.clone(),
            avg_aoi: sim.as_ref().map(|r| r.avg_aoi),
            gap_vs_myopic: sim.as_ref().map(|r| myopic.avg_aoi - r.avg_aoi),
            n_epochs: sim.as_ref().map(|r| r.n_epochs),
            censored: sim.as_ref().map(|r| r.censored),
        });
        exact_rows.push(match exact {
            Ok((v, method, thresholds)) => ExactRow {
                p,
                policy: name,
                avg_aoi: Some(v),
                gap_vs_myopic: Some(myopic_exact - v),
                method: method.to_string(),
                thresholds,
            },
            Err(reason) => ExactRow {
                p,
                policy: name,
                avg_aoi: None,
                gap_vs_myopic: None,
                method: format!("failed: {reason}"),
                thresholds: None,
            },
        });
    }
    Ok((sim_rows, exact_rows))
}

type Exact = Result<(f64, &'static str, Option<String>), String>;

/// Renewal evaluation of the extracted thresholds (by enumeration, or by
/// recursion when the window is too wide to enumerate), falling back to the
/// stationary solve of the table when the policy has no threshold form.
fn exact_optimal(tab: &TabularPolicy, tp: Option<&ThresholdPolicy>, p: f64, d: u32) -> Exact {
    if let Some(tp) = tp {
        let shown = Some(tp.to_string());
        let stats = match eval_threshold_exact(tp, p, d) {
            Ok(s) => Ok((s, "renewal")),
            Err(RenewalError::WindowTooLarge { .. }) => {
                eval_threshold_recursive(tp, p, d).map(|s| (s, "recursion"))
            }
            Err(e) => Err(e),
        };
        match stats {
            Ok((s, method)) => return Ok((s.avg_aoi_per_slot, method, shown)),
            Err(e) => log::warn!("p={p}: {e}; using the stationary solve"),
        }
    }
    evaluate_stationary(tab)
        .map(|v| (v, "stationary", tp.map(|t| t.to_string())))
        .map_err(|e| e.to_string())
}
