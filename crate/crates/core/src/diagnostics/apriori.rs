use serde::Serialize;

use super::{lattice_of, solve_ladder, squared_norms, time_integral, DiagnosticsReport, Status};
use crate::bsde::{lattice_states, BackwardSolution, BsviProblem};
use crate::convex::ExtReal;
use crate::error::{BsviError, Result};

const ANCHOR: &str = "uniform-in-epsilon a priori bound";

/// Left-hand quantities of the a priori bound, available for any lattice
/// solution.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct EnergyTerms {
    /// `E sup_k |Y_k|²`.
    pub sup_y2: f64,
    /// `E Σ_{k<n} |U_k|² dt`.
    pub int_u2: f64,
    /// `E Σ_{k<n} |Z_k|² dt`.
    pub int_z2: f64,
    /// `E Σ_{k<n} |U_k| dt`, the expected total variation of `K`.
    pub total_variation: f64,
}

pub fn energy_terms(solution: &BackwardSolution) -> Result<EnergyTerms> {
    let lattice = lattice_of(solution)?;
    let d = solution.dim;
    let dt = solution.grid().dt();
    let y2: Vec<Vec<f64>> = solution.y.iter().map(|v| squared_norms(v, d)).collect();
    let u2: Vec<Vec<f64>> = solution.u.iter().map(|v| squared_norms(v, d)).collect();
    let z2: Vec<Vec<f64>> = solution.z.iter().map(|v| squared_norms(v, d)).collect();
    let u_abs: Vec<Vec<f64>> = u2.iter().map(|v| v.iter().map(|x| x.sqrt()).collect()).collect();
    Ok(EnergyTerms {
        sup_y2: lattice.expected_running_max(&y2)?,
        int_u2: time_integral(lattice, &u2, dt)?,
        int_z2: time_integral(lattice, &z2, dt)?,
        total_variation: time_integral(lattice, &u_abs, dt)?,
    })
}

/// Left- and right-hand sides of the uniform a priori bound
///
/// ```text
/// E sup|Y|² + E∫(|U|² + |Z|²) ≤ C (E|η|² + Eφ(η) + E∫|F(r, X, 0, 0)|² dr)
/// ```
///
/// with the implied ratio `Ĉ`, and the total variation `E Σ|U| dt` of `K`
/// against its Cauchy–Schwarz bound `√T (E∫|U|²)^{1/2}`.
pub fn apriori_report(solution: &BackwardSolution, problem: &BsviProblem) -> Result<DiagnosticsReport> {
    let lattice = lattice_of(solution)?;
    let d = problem.dim;
    let n = solution.n_steps();
    let dt = problem.grid.dt();

    for j in 0..=n {
        if let ExtReal::PosInfinity = problem.convex.eval(solution.y_at(n, j))? {
            return Err(BsviError::DataViolation(format!(
                "phi(eta) = +inf at terminal node {j} (eta = {:?})",
                solution.y_at(n, j)
            )));
        }
    }

    let EnergyTerms {
        sup_y2,
        int_u2,
        int_z2,
        total_variation,
    } = energy_terms(solution)?;
    let tv_bound = problem.grid.horizon().sqrt() * int_u2.sqrt();
    let y2_terminal = squared_norms(&solution.y[n], d);

    let eta2 = lattice.expectation(&y2_terminal, 1, n)?[0];
    let mut phi_eta = Vec::with_capacity(n + 1);
    for j in 0..=n {
        phi_eta.push(problem.convex.eval(solution.y_at(n, j))?.to_f64());
    }
    let e_phi = lattice.expectation(&phi_eta, 1, n)?[0];
    let mut f2 = Vec::with_capacity(n);
    let zeros_y = vec![0.0; d];
    let zeros_z = vec![0.0; d * solution.noise_dim];
    let mut f = vec![0.0; d];
    for k in 0..n {
        let states = lattice_states(problem, lattice, k);
        let width = states.len() / (k + 1);
        let mut col = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let x = &states[j * width..(j + 1) * width];
            problem.driver.eval(problem.grid.time(k), x, &zeros_y, &zeros_z, &mut f);
            col.push(f.iter().map(|v| v * v).sum());
        }
        f2.push(col);
    }
    let int_f2 = time_integral(lattice, &f2, dt)?;
    let lhs = sup_y2 + int_u2 + int_z2;
    let data = eta2 + e_phi + int_f2;
    let c_hat = if data > 0.0 { lhs / data } else { f64::NAN };

    let mut r = DiagnosticsReport::default();
    r.provenance.epsilon = Some(problem.epsilon);
    r.provenance.dt = Some(dt);
    r.push("sup_y_squared", sup_y2, "E sup_k |Y_k|^2", ANCHOR, Status::Info);
    r.push("energy_u", int_u2, "E sum |U_k|^2 dt", ANCHOR, Status::Info);
    r.push("energy_z", int_z2, "E sum |Z_k|^2 dt", ANCHOR, Status::Info);
    r.push("energy_uz", int_u2 + int_z2, "E sum (|U_k|^2 + |Z_k|^2) dt", ANCHOR, Status::Info);
    r.push("data_functional", data, "E|eta|^2 + E phi(eta) + E sum |F(t,X,0,0)|^2 dt", ANCHOR, Status::Info);
    r.push("c_hat", c_hat, "lhs / data, bounded uniformly in epsilon", ANCHOR, Status::Info);
    let tv_ok = total_variation <= tv_bound * (1.0 + 1e-12) + 1e-15;
    r.push(
        "total_variation_k",
        total_variation,
        format!("<= sqrt(T) (E int |U|^2)^(1/2) = {tv_bound}"),
        "total variation of K",
        if tv_ok { Status::Pass } else { Status::Fail },
    );
    r.notes.extend(solution.metadata.notes.iter().cloned());
    Ok(r)
}

/// A priori reports along an ε ladder with the monotonicity check on `Ĉ`.
#[derive(Clone, Debug, Serialize)]
pub struct AprioriSweep {
    pub epsilons: Vec<f64>,
    pub reports: Vec<DiagnosticsReport>,
    pub c_hat: Vec<f64>,
    pub energy_uz: Vec<f64>,
    /// `Ĉ` never increases by more than 5% along the ladder.
    pub c_hat_non_increasing: bool,
    /// `max/min` of `E∫(|U|² + |Z|²)` across the ladder.
    pub energy_spread: f64,
}

pub fn apriori_sweep(problem: &BsviProblem, eps_list: &[f64]) -> Result<AprioriSweep> {
    if eps_list.len() < 2 {
        return Err(BsviError::invalid("an a priori sweep needs at least 2 epsilons"));
    }
    let solutions = solve_ladder(problem, eps_list)?;
    let mut reports = Vec::new();
    for (s, eps) in solutions.iter().zip(eps_list) {
        reports.push(apriori_report(s, &problem.with_epsilon(*eps)?)?);
    }
    let c_hat: Vec<f64> = reports.iter().map(|r| r.value("c_hat").unwrap_or(f64::NAN)).collect();
    let energy_uz: Vec<f64> = reports.iter().map(|r| r.value("energy_uz").unwrap_or(f64::NAN)).collect();
    let c_hat_non_increasing = c_hat.windows(2).all(|w| w[1] <= w[0] * 1.05);
    let max = energy_uz.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = energy_uz.iter().cloned().fold(f64::INFINITY, f64::min);
    let energy_spread = if max == 0.0 { 1.0 } else { max / min };
    Ok(AprioriSweep {
        epsilons: eps_list.to_vec(),
        reports,
        c_hat,
        energy_uz,
        c_hat_non_increasing,
        energy_spread,
    })
}
