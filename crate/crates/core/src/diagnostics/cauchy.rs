use serde::Serialize;

use super::{check_ladder, lattice_of, solve_ladder};
use crate::bsde::BsviProblem;
use crate::error::Result;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CauchyPair {
    pub epsilon: f64,
    pub delta: f64,
    /// `E sup_k |H_{t_k}^{-1/2}(Y_k^ε − Y_k^δ)|²`.
    pub distance: f64,
    /// `distance / (ε + δ)`.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CauchyStudy {
    pub pairs: Vec<CauchyPair>,
    /// Least-squares fit of `log D = log C + log(ε + δ)`, i.e. the geometric
    /// mean of the ratios (their maximum when some distance vanishes).
    pub fitted_constant: f64,
    /// Distances strictly decrease down the ladder (or all vanish).
    pub monotone: bool,
    /// Every ratio is at most twice the fitted constant.
    pub bounded: bool,
    /// Every ratio is within a factor 2 of the fitted constant, both ways.
    pub two_sided: bool,
    pub passed: bool,
}

/// Weighted sup-distances between consecutive solutions of an ε ladder,
/// checked against `D(ε, δ) ≤ Ĉ(ε + δ)`.
pub fn cauchy_study(problem: &BsviProblem, eps_list: &[f64]) -> Result<CauchyStudy> {
    check_ladder(eps_list)?;
    problem.require_strong_scope()?;
    let d = problem.dim;
    let solutions = solve_ladder(problem, eps_list)?;
    let lattice = lattice_of(&solutions[0])?;
    let n = problem.grid.n_steps();
    let zero = vec![0.0; d];
    let weights: Vec<nalgebra::DMatrix<f64>> = (0..=n)
        .map(|k| problem.field.eval(problem.grid.time(k), &zero).map(|e| e.h_inv_sqrt))
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    for (i, w) in solutions.windows(2).enumerate() {
        let mut per_step = Vec::with_capacity(n + 1);
        for (k, weight) in weights.iter().enumerate() {
            let col: Vec<f64> = (0..=k)
                .map(|j| {
                    let diff: Vec<f64> = w[0]
                        .y_at(k, j)
                        .iter()
                        .zip(w[1].y_at(k, j))
                        .map(|(a, b)| a - b)
                        .collect();
                    (0..d)
                        .map(|r| {
                            let v: f64 = (0..d).map(|c| weight[(r, c)] * diff[c]).sum();
                            v * v
                        })
                        .sum()
                })
                .collect();
            per_step.push(col);
        }
        let distance = lattice.expected_running_max(&per_step)?;
        let (epsilon, delta) = (eps_list[i], eps_list[i + 1]);
        pairs.push(CauchyPair {
            epsilon,
            delta,
            distance,
            ratio: distance / (epsilon + delta),
        });
    }
    let all_zero = pairs.iter().all(|p| p.distance == 0.0);
    // least squares for log D = log C + log(ε + δ)
    let fitted_constant = if pairs.iter().all(|p| p.ratio > 0.0) {
        (pairs.iter().map(|p| p.ratio.ln()).sum::<f64>() / pairs.len() as f64).exp()
    } else {
        pairs.iter().fold(0.0f64, |m, p| m.max(p.ratio))
    };
    let monotone = all_zero || pairs.windows(2).all(|w| w[1].distance < w[0].distance);
    let bounded = pairs.iter().all(|p| p.ratio <= 2.0 * fitted_constant);
    let two_sided = all_zero
        || pairs
            .iter()
            .all(|p| p.ratio <= 2.0 * fitted_constant && p.ratio >= 0.5 * fitted_constant);
    Ok(CauchyStudy {
        pairs,
        fitted_constant,
        monotone,
        bounded,
        two_sided,
        passed: monotone && two_sided,
    })
}
