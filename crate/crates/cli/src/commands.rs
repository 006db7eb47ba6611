use std::fmt;
use std::io::Write;
use std::time::Instant;

use anyhow::{bail, Result};
use serde::Serialize;

use aoi_core::mdp::{extract_thresholds, solve_rvi, solve_structured, ShapeViolation};
use aoi_core::policies::PolicySpecError;
use aoi_core::sim::{sweep as run_sweep, SimError, SweepConfig, SweepPolicy};
use aoi_core::{
    epoch_coords, simulate as run_simulation, Action, MdpError, ParamError, Params, PolicyKind,
    SimConfig, SolveConfig,
};

use crate::manifest::ArtifactDir;
use crate::{InstanceArgs, PolicymapArgs, SimulateArgs, SolveArgs, SolverArgs, SweepArgs};

/// Bad flag values that clap cannot catch on its own. Exit code 2.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// The solver ran but its answer is unusable. Exit code 3.
#[derive(Debug)]
struct SolverFailure(String);

impl fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SolverFailure {}

/// Prints a line to stdout; a closed pipe (`| head`) is not an error.
fn emit(line: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// 2 for invalid input, 3 for non-convergence or a policy that is not
/// threshold-shaped, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<ParamError>() {
            return 2;
        }
        if cause.is::<SolverFailure>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<MdpError>() {
            return match e {
                MdpError::NotConverged { .. } | MdpError::Reducible => 3,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::Param(_)
                | SimError::EmptyHorizon
                | SimError::EpochCap { .. }
                | SimError::ParamsMismatch { .. } => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<PolicySpecError>() {
            return match e {
                PolicySpecError::Io { .. } => 1,
                _ => 2,
            };
        }
    }
    1
}

impl InstanceArgs {
    fn params(&self) -> Result<Params, ParamError> {
        match self.delta_m {
            Some(m) => Params::new(self.p, self.d, m),
            None => Params::with_default_truncation(self.p, self.d),
        }
    }
}

impl SolverArgs {
    fn config(&self, record_trace: bool) -> SolveConfig {
        SolveConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            record_trace,
            ..SolveConfig::default()
        }
    }
}

#[derive(Serialize)]
struct SolveRecord {
    #[serde(flatten)]
    params: Params,
    tol: f64,
    max_iters: usize,
    step: f64,
    verify: bool,
}

pub fn solve(a: &SolveArgs) -> Result<()> {
    let params = a.instance.params()?;
    let cfg = a.solver.config(a.debug);
    let started = Instant::now();
    let sol = solve_structured(&params, &cfg)?;
    log::info!(
        "structured solve: {} sweeps, {} minimizations, {:.2?}",
        sol.iterations,
        sol.minimizations,
        started.elapsed()
    );

    let record = SolveRecord {
        params,
        tol: cfg.tol,
        max_iters: cfg.max_iters,
        step: cfg.step,
        verify: a.verify,
    };
    let mut out = ArtifactDir::create(&a.out, "solve", record, Vec::new())?;
    out.write_json_compact("tabular_policy.json", &sol.policy)?;
    if a.debug {
        out.write_csv("rvi_trace.csv", &sol.trace)?;
    }

    if a.verify {
        let plain = solve_rvi(
            &params,
            &SolveConfig {
                record_trace: false,
                ..cfg
            },
        )?;
        let diff = sol.policy.diff(&plain.policy);
        let gap = (sol.policy.avg_cost - plain.policy.avg_cost).abs();
        if !diff.is_empty() || gap >= 1e-8 {
            out.finish()?;
            return Err(SolverFailure(format!(
                "structured and plain solves disagree on {} states (first: {:?}); avg_cost differs by {gap:.3e}",
                diff.len(),
                diff.first().map(|s| s.to_string())
            ))
            .into());
        }
    }

    match extract_thresholds(&sol.policy) {
        Ok(tp) => {
            out.write_json("threshold_policy.json", &tp)?;
            out.finish()?;
            emit(&format!("{tp} avg_cost={:.9}", sol.policy.avg_cost))?;
            if a.verify {
                emit("verified: structured == plain")?;
            }
            Ok(())
        }
        Err(violations) => {
            out.finish()?;
            Err(shape_failure(&violations))
        }
    }
}

fn shape_failure(violations: &[ShapeViolation]) -> anyhow::Error {
    let shown: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
    SolverFailure(format!(
        "solved policy is not threshold-shaped ({} violations: {}{})",
        violations.len(),
        shown.join("; "),
        if violations.len() > 5 { "; ..." } else { "" }
    ))
    .into()
}

#[derive(Serialize)]
struct SimulateRecord {
    policy: String,
    #[serde(flatten)]
    config: SimConfig,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let kind = a.policy.load()?;
    let params = match &kind {
        PolicyKind::Tabular(tab) => {
            let file = tab.params;
            if file.p != a.instance.p || file.d != a.instance.d {
                bail!(invalid(format!(
                    "tabular policy was solved for p={} d={}, not p={} d={}",
                    file.p, file.d, a.instance.p, a.instance.d
                )));
            }
            if a.instance.delta_m.is_some_and(|m| m != file.delta_m) {
                bail!(invalid(format!(
                    "tabular policy uses delta_m={}",
                    file.delta_m
                )));
            }
            file
        }
        _ => a.instance.params()?,
    };
    let mut cfg = SimConfig::new(params, a.horizon, a.seed);
    if let Some(cap) = a.epoch_cap {
        cfg.epoch_cap = cap;
    }
    let report = run_simulation(&kind, &cfg)?;
    emit(&serde_json::to_string_pretty(&report)?)?;

    if let Some(dir) = &a.out {
        let record = SimulateRecord {
            policy: policy_label(&a.policy),
            config: cfg,
        };
        let mut out = ArtifactDir::create(dir, "simulate", record, vec![a.seed])?;
        out.write_json("sim_report.json", &report)?;
        out.finish()?;
    }
    Ok(())
}

fn policy_label(spec: &aoi_core::PolicySpec) -> String {
    use aoi_core::PolicySpec::*;
    match spec {
        Myopic => "myopic".into(),
        AlwaysSwitch => "always-switch".into(),
        Threshold(p) => format!("threshold:{}", p.display()),
        Tabular(p) => format!("tabular:{}", p.display()),
    }
}

#[derive(Serialize)]
struct StateRow {
    delta: u32,
    l: u32,
    a: u8,
    action: Action,
}

#[derive(Serialize)]
struct EpochRow {
    i: u32,
    j: u32,
    action: Action,
}

#[derive(Serialize)]
struct PolicymapRecord {
    #[serde(flatten)]
    params: Params,
    tol: f64,
    max_iters: usize,
}

pub fn policymap(a: &PolicymapArgs) -> Result<()> {
    let params = a.instance.params()?;
    let cfg = a.solver.config(false);
    let sol = solve_structured(&params, &cfg)?;
    let policy = &sol.policy;

    let record = PolicymapRecord {
        params,
        tol: cfg.tol,
        max_iters: cfg.max_iters,
    };
    let mut out = ArtifactDir::create(&a.out, "policymap", record, Vec::new())?;
    out.write_csv(
        "state_map.csv",
        params.states().map(|s| StateRow {
            delta: s.delta,
            l: s.l,
            a: s.arrival as u8,
            action: policy.action(&s),
        }),
    )?;
    out.write_csv(
        "epoch_map.csv",
        params.states().filter(|s| s.arrival).filter_map(|s| {
            epoch_coords(&s, &params).map(|c| EpochRow {
                i: c.i,
                j: c.j,
                action: policy.action(&s),
            })
        }),
    )?;
    out.finish()?;

    match extract_thresholds(policy) {
        Ok(tp) => emit(&tp.to_string())?,
        Err(v) => log::warn!("{}", shape_failure(&v)),
    }
    Ok(())
}

/// `0.1,0.5,0.9` or `start:step:end` (inclusive, values rounded to 1e-10).
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| invalid(format!("'{s}' in --p-grid is not a number")))
    };
    let grid: Vec<f64> = match text.split(':').collect::<Vec<_>>()[..] {
        [start, step, end] => {
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            if step.is_nan() || step <= 0.0 || end < start {
                bail!(invalid(format!("empty range '{text}' in --p-grid")));
            }
            let n = ((end - start) / step + 1e-9).floor() as usize;
            (0..=n)
                .map(|k| ((start + k as f64 * step) * 1e10).round() / 1e10)
                .collect()
        }
        [_] => text.split(',').map(num).collect::<Result<_>>()?,
        _ => bail!(invalid(format!("cannot parse --p-grid '{text}'"))),
    };
    if grid.is_empty() {
        bail!(invalid("--p-grid is empty"));
    }
    Ok(grid)
}

fn parse_policies(text: &str) -> Result<Vec<SweepPolicy>> {
    text.split(',')
        .map(|s| match s.trim() {
            "myopic" => Ok(SweepPolicy::Myopic),
            "always-switch" => Ok(SweepPolicy::AlwaysSwitch),
            "optimal" => Ok(SweepPolicy::Optimal),
            other => Err(invalid(format!("unknown sweep policy '{other}'"))),
        })
        .collect()
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let mut cfg = SweepConfig::new(parse_grid(&a.p_grid)?, a.d, a.horizon, a.seed);
    cfg.policies = parse_policies(&a.policies)?;
    cfg.delta_m = a.delta_m;
    cfg.tol = a.tol;
    cfg.jobs = a.jobs;

    let (rows, exact) = run_sweep(&cfg)?;
    let failed = exact.iter().filter(|r| r.avg_aoi.is_none()).count();

    // thread count does not change the output, so keep it out of the manifest
    let mut recorded = cfg.clone();
    recorded.jobs = 0;
    let mut out = ArtifactDir::create(&a.out, "sweep", &recorded, vec![a.seed])?;
    out.write_csv("sweep.csv", &rows)?;
    out.write_csv("sweep_exact.csv", &exact)?;
    out.finish()?;
    emit(&format!(
        "{} rows over {} grid points written to {}",
        rows.len(),
        cfg.p_grid.len(),
        a.out.display()
    ))?;
    if failed > 0 {
        log::warn!("{failed} cells failed; see sweep_exact.csv");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ranges() {
        let g = parse_grid("0.01:0.02:0.99").unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[3], 0.07);
        assert_eq!(*g.last().unwrap(), 0.99);
        assert_eq!(parse_grid("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_grid("0.1, 0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_grid("0.1:0:0.5").is_err());
        assert!(parse_grid("x").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&invalid("x")), 2);
        assert_eq!(exit_code(&ParamError::Duration(1).into()), 2);
        let nc = MdpError::NotConverged {
            iterations: 1,
            span: 1.0,
        };
        assert_eq!(exit_code(&anyhow::Error::from(nc).context("solving")), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("disk full")), 1);
    }
}
