use serde::Serialize;

use super::lattice_of;
use crate::bsde::{lattice_states, BackwardSolution, BsviProblem};
use crate::error::Result;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EnergyProfile {
    /// Largest absolute residual at each step `0..n`.
    pub per_step: Vec<f64>,
    pub max: f64,
    /// `(step, node)` of the largest residual.
    pub location: (usize, usize),
    /// Whether the penalty is active (`U ≠ 0`) at that node.
    pub active_at_max: bool,
}

/// Residual of the one-step energy identity
///
/// ```text
/// |Y_k|² + E_k[2⟨Y_k, HU − F⟩dt + |ΔM_{k+1}|²] − E_k|Y_{k+1}|²
/// ```
///
/// with `ΔM_{k+1} = Y_{k+1} − E_k[Y_{k+1}]`. It vanishes for martingales and
/// equals `−dt²|HU − F|²` under the scheme.
pub fn energy_residual(solution: &BackwardSolution, problem: &BsviProblem) -> Result<EnergyProfile> {
    let lattice = lattice_of(solution)?;
    let d = problem.dim;
    let n = solution.n_steps();
    let dt = problem.grid.dt();
    let mut per_step = Vec::with_capacity(n);
    let mut best = (0.0, (0, 0), false);
    let mut f = vec![0.0; d];
    for k in 0..n {
        let next = &solution.y[k + 1];
        let next_sq: Vec<f64> = next.chunks(d).map(|c| c.iter().map(|v| v * v).sum()).collect();
        let mean_sq = lattice.cond_expect(&next_sq)?;
        let mean = lattice.cond_expect_vec(next, d)?;
        // E_k|ΔM|² from the two children directly
        let mut dm = vec![0.0; k + 1];
        for (j, slot) in dm.iter_mut().enumerate() {
            for child in [j, j + 1] {
                let s: f64 = (0..d)
                    .map(|c| (next[child * d + c] - mean[j * d + c]).powi(2))
                    .sum();
                *slot += 0.5 * s;
            }
        }
        let states = lattice_states(problem, lattice, k);
        let width = states.len() / (k + 1);
        let t = problem.grid.time(k);
        let mut worst: f64 = 0.0;
        for j in 0..=k {
            let y = solution.y_at(k, j);
            let u = solution.u_at(k, j);
            let h = problem.field.matrix(t, y);
            problem
                .driver
                .eval(t, &states[j * width..(j + 1) * width], y, solution.z_at(k, j), &mut f);
            let mut inner = 0.0;
            for i in 0..d {
                let hu: f64 = (0..d).map(|c| h[(i, c)] * u[c]).sum();
                inner += y[i] * (hu - f[i]);
            }
            let y2: f64 = y.iter().map(|v| v * v).sum();
            let r = (y2 + 2.0 * inner * dt + dm[j] - mean_sq[j]).abs();
            worst = worst.max(r);
            if r > best.0 {
                best = (r, (k, j), u.iter().any(|v| *v != 0.0));
            }
        }
        per_step.push(worst);
    }
    Ok(EnergyProfile {
        per_step,
        max: best.0,
        location: best.1,
        active_at_max: best.2,
    })
}
