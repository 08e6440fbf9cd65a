//! Numerical checks of the a priori estimates and convergence structure of
//! the penalized scheme. Every expectation is an exact lattice sum.

mod apriori;
mod cauchy;
mod cv;
mod energy;
mod gap;

use std::io::Write;

use serde::Serialize;

pub use apriori::{apriori_report, apriori_sweep, energy_terms, AprioriSweep, EnergyTerms};
pub use cauchy::{cauchy_study, CauchyPair, CauchyStudy};
pub use cv::{conditional_variation, conditional_variation_on_partition};
pub use energy::{energy_residual, EnergyProfile};
pub use gap::{resolvent_gap, yosida_gap_slope, GapSlope, MIN_GAP_SLOPE};

use crate::bsde::{BackwardSolution, BsviProblem};
use crate::error::{BsviError, Result};

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Reported without a pass/fail judgement (unknown constants).
    Info,
}

/// One named scalar with the estimate it illustrates.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Metric {
    pub name: String,
    /// `NaN` serializes as `null`.
    pub value: f64,
    /// Bound or expectation the value is compared with.
    pub bound: String,
    /// Estimate the metric belongs to, or `"plumbing"`.
    pub anchor: String,
    pub status: Status,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct DiagnosticsReport {
    pub metrics: Vec<Metric>,
    pub provenance: Provenance,
    pub notes: Vec<String>,
}

impl DiagnosticsReport {
    pub fn push(
        &mut self,
        name: impl Into<String>,
        value: f64,
        bound: impl Into<String>,
        anchor: impl Into<String>,
        status: Status,
    ) {
        self.metrics.push(Metric {
            name: name.into(),
            value,
            bound: bound.into(),
            anchor: anchor.into(),
            status,
        });
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|m| m.value)
    }

    /// True when no metric failed.
    pub fn all_passed(&self) -> bool {
        self.metrics.iter().all(|m| m.status != Status::Fail)
    }

    pub fn merge(&mut self, prefix: &str, other: DiagnosticsReport) {
        for mut m in other.metrics {
            m.name = format!("{prefix}{}", m.name);
            self.metrics.push(m);
        }
        self.notes.extend(other.notes);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Writes `epsilon,metric,value` rows.
pub fn write_convergence_csv<W: Write>(mut w: W, rows: &[(f64, &str, f64)]) -> std::io::Result<()> {
    writeln!(w, "epsilon,metric,value")?;
    for (eps, metric, value) in rows {
        writeln!(w, "{eps},{metric},{value}")?;
    }
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn check_ladder(eps_list: &[f64]) -> Result<()> {
    if eps_list.len() < 3 {
        return Err(BsviError::invalid("an epsilon ladder needs at least 3 values"));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(BsviError::invalid("epsilon ladder must be positive and strictly decreasing"));
    }
    Ok(())
}

fn lattice_of(solution: &BackwardSolution) -> Result<&crate::forward::LatticeModel> {
    solution
        .lattice()
        .ok_or_else(|| BsviError::invalid("this diagnostic needs a lattice solution"))
}

/// `Σ_{k<n} E[v_k] dt` for per-step scalar node functions.
fn time_integral(lattice: &crate::forward::LatticeModel, per_step: &[Vec<f64>], dt: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (k, v) in per_step.iter().enumerate().take(lattice.n_steps()) {
        acc += lattice.expectation(v, 1, k)?[0] * dt;
    }
    Ok(acc)
}

fn squared_norms(values: &[f64], dim: usize) -> Vec<f64> {
    values.chunks(dim).map(|c| c.iter().map(|v| v * v).sum()).collect()
}

fn solve_ladder(problem: &BsviProblem, eps_list: &[f64]) -> Result<Vec<BackwardSolution>> {
    eps_list
        .iter()
        .map(|e| crate::bsde::solve_penalized(&problem.with_epsilon(*e)?, &crate::bsde::Backend::Lattice))
        .collect()
}
