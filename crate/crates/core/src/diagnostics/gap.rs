use serde::Serialize;

use super::{check_ladder, lattice_of, log_log_slope, solve_ladder, squared_norms, time_integral};
use crate::bsde::{BackwardSolution, BsviProblem};
use crate::error::Result;

/// Required fitted slope of the resolvent gap.
pub const MIN_GAP_SLOPE: f64 = 1.7;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct GapSlope {
    pub epsilons: Vec<f64>,
    /// `E∫|Y^ε − J_ε(Y^ε)|² dr`.
    pub gaps: Vec<f64>,
    /// `E∫|Y^ε|² dr`.
    pub energies: Vec<f64>,
    /// `None` when every gap vanishes (constraint inactive).
    pub slope: Option<f64>,
    pub passed: Option<bool>,
    /// For `φ = ½q|y|²`, the slope of `gap·(1 + εq)²/(q² E∫|Y^ε|²)`, which
    /// is `ε²` when the resolvent is exact.
    pub analytic_slope: Option<f64>,
    pub note: Option<String>,
}

/// `(E∫|Y^ε − J_ε(Y^ε)|² dr, E∫|Y^ε|² dr)` for a lattice solution.
pub fn resolvent_gap(solution: &BackwardSolution, eps: f64) -> Result<(f64, f64)> {
    let lattice = lattice_of(solution)?;
    let d = solution.dim;
    let dt = solution.grid().dt();
    // |Y − J_ε(Y)| = ε|∇φ_ε(Y)|
    let gap: Vec<Vec<f64>> = solution
        .u
        .iter()
        .map(|u| squared_norms(u, d).into_iter().map(|v| v * eps * eps).collect())
        .collect();
    let y2: Vec<Vec<f64>> = solution.y.iter().map(|v| squared_norms(v, d)).collect();
    Ok((time_integral(lattice, &gap, dt)?, time_integral(lattice, &y2, dt)?))
}

/// Solves along the ε ladder and fits the log-log slope of the resolvent
/// gap, which is expected to scale like `ε²`.
pub fn yosida_gap_slope(problem: &BsviProblem, eps_list: &[f64]) -> Result<GapSlope> {
    check_ladder(eps_list)?;
    let mut gaps = Vec::new();
    let mut energies = Vec::new();
    for (s, eps) in solve_ladder(problem, eps_list)?.iter().zip(eps_list) {
        let (gap, energy) = resolvent_gap(s, *eps)?;
        gaps.push(gap);
        energies.push(energy);
    }
    let (slope, note) = if gaps.iter().all(|g| *g == 0.0) {
        (None, Some("slope undefined, constraint inactive".to_string()))
    } else {
        match log_log_slope(eps_list, &gaps) {
            Some(s) => (Some(s), None),
            None => (None, Some("slope undefined, some gaps vanish".to_string())),
        }
    };
    let analytic_slope = problem.convex.isotropic_quadratic_coefficient().and_then(|q| {
        let compensated: Vec<f64> = gaps
            .iter()
            .zip(&energies)
            .zip(eps_list)
            .map(|((g, e), eps)| g * (1.0 + eps * q).powi(2) / (q * q * e))
            .collect();
        log_log_slope(eps_list, &compensated)
    });
    Ok(GapSlope {
        epsilons: eps_list.to_vec(),
        passed: slope.map(|s| s >= MIN_GAP_SLOPE),
        gaps,
        energies,
        slope,
        analytic_slope,
        note,
    })
}
