use nalgebra::{DMatrix, DVector};

use crate::numeric::CompensatedSum;
use crate::types::{Action, TabularPolicy};

use super::kernel::{completes, CompiledKernel};
use super::MdpError;

/// Long-run average cost of the Markov chain induced by `policy`, computed
/// from its stationary distribution.
///
/// This does not iterate values: it solves the balance equations directly,
/// so it serves as an independent check on the solvers' `avg_cost`.
pub fn evaluate_stationary(policy: &TabularPolicy) -> Result<f64, MdpError> {
    let pi = stationary_distribution(policy)?;
    let params = &policy.params;
    let kernel = CompiledKernel::new(params);
    Ok(pi
        .iter()
        .zip(policy.actions())
        .enumerate()
        .filter(|(_, (w, _))| **w > 0.0)
        .map(|(idx, (w, act))| w * kernel.edge(idx, *act).cost)
        .collect::<CompensatedSum>()
        .value())
}

/// Stationary distribution of the chain induced by `policy`, indexed like the
/// policy table.
///
/// Non-completing transitions move AoI level `delta` to `delta + 1` (or stay
/// at the boundary), and completions land on level `d` with the idle flag.
/// Fixing the completion flow to 1, the mass on every level below the
/// boundary follows by forward substitution, and the boundary level solves
/// one `2d x 2d` system. Normalizing gives the distribution.
///
/// Fails with [`MdpError::Reducible`] when the policy has a closed class at
/// the boundary that never completes.
pub fn stationary_distribution(policy: &TabularPolicy) -> Result<Vec<f64>, MdpError> {
    let params = &policy.params;
    params.validate()?;
    let kernel = CompiledKernel::new(params);
    let p = params.p;
    let width = 2 * params.d as usize;
    let levels = params.levels();
    let boundary = levels - 1;
    let actions = policy.actions();

    let mut mass = vec![0.0; params.num_states()];
    // completion inflow of 1 lands on (d, 0, 0) and (d, 0, 1)
    mass[0] = 1.0 - p;
    mass[1] = p;

    let mut into_boundary = vec![0.0; width];
    for level in 0..boundary {
        for w in 0..width {
            let idx = level * width + w;
            let m = mass[idx];
            if m == 0.0 {
                continue;
            }
            let s = params.state_at(idx);
            if completes(&s, actions[idx], params.d) {
                continue;
            }
            let base = kernel.edge(idx, actions[idx]).base;
            if level + 1 == boundary {
                let off = base - boundary * width;
                into_boundary[off] += (1.0 - p) * m;
                into_boundary[off + 1] += p * m;
            } else {
                mass[base] += (1.0 - p) * m;
                mass[base + 1] += p * m;
            }
        }
    }

    // boundary balance: x (I - N) = b, solved as (I - N)^T x^T = b^T
    let mut system = DMatrix::<f64>::identity(width, width);
    for w in 0..width {
        let idx = boundary * width + w;
        let s = params.state_at(idx);
        let act = actions[idx];
        if completes(&s, act, params.d) {
            continue;
        }
        let off = kernel.edge(idx, act).base - boundary * width;
        system[(off, w)] -= 1.0 - p;
        system[(off + 1, w)] -= p;
    }
    let rhs = DVector::from_vec(into_boundary);
    let x = system.lu().solve(&rhs).ok_or(MdpError::Reducible)?;
    if x.iter().any(|v| !v.is_finite() || *v < -1e-9) {
        return Err(MdpError::Reducible);
    }
    for (w, v) in x.iter().enumerate() {
        mass[boundary * width + w] = v.max(0.0);
    }

    let completion_flow: f64 = mass
        .iter()
        .enumerate()
        .filter(|(idx, _)| actions[*idx] == Action::Skip && params.state_at(*idx).l == params.d - 1)
        .map(|(_, m)| *m)
        .collect::<CompensatedSum>()
        .value();
    if (completion_flow - 1.0).abs() > 1e-8 {
        return Err(MdpError::Reducible);
    }

    let total = mass.iter().copied().collect::<CompensatedSum>().value();
    for m in &mut mass {
        *m /= total;
    }
    Ok(mass)
}
