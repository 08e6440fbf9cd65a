//! Finite differences for the penalized parabolic problem
//!
//! ```text
//! ∂_t u + ½σ²∂_xx u + b∂_x u + F(t, x, u, σ∂_x u) = H(t, u)∇φ_ε(u),   u(T, ·) = g
//! ```
//!
//! in one space dimension, and its cross-check against the backward solver
//! through `u(t, x) = Y_t^{t,x}`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bsde::{
    solve_node, solve_penalized, Backend, BsviProblem, FieldSource, ForwardModel, StepContext, Terminal,
};
use crate::error::{BsviError, Result};
use crate::forward::{Coefficients, TimeGrid};

/// Uniform `(n_t + 1) × (n_x + 1)` grid on `[0, T] × [x_lo, x_hi]`.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct PdeGrid {
    pub t_end: f64,
    pub n_t: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
}

impl PdeGrid {
    pub fn new(t_end: f64, n_t: usize, x_lo: f64, x_hi: f64, n_x: usize) -> Result<Self> {
        if n_t < 2 || n_x < 2 {
            return Err(BsviError::invalid(format!(
                "pde grid needs n_t, n_x >= 2 (got {n_t}, {n_x})"
            )));
        }
        if !(t_end > 0.0) || !(x_hi > x_lo) || !t_end.is_finite() || !x_lo.is_finite() || !x_hi.is_finite() {
            return Err(BsviError::invalid("pde grid needs T > 0 and x_lo < x_hi"));
        }
        Ok(Self {
            t_end,
            n_t,
            x_lo,
            x_hi,
            n_x,
        })
    }

    /// Space window `x_bar ± 4√T`.
    pub fn centered(x_bar: f64, t_end: f64, n_t: usize, n_x: usize) -> Result<Self> {
        let half = 4.0 * t_end.sqrt();
        Self::new(t_end, n_t, x_bar - half, x_bar + half, n_x)
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_t as f64
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.n_x as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_t {
            self.t_end
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn x(&self, j: usize) -> f64 {
        if j == self.n_x {
            self.x_hi
        } else {
            self.x_lo + j as f64 * self.dx()
        }
    }

    /// Halved `dt` and `dx` on the same window.
    pub fn refined(&self) -> Self {
        Self {
            n_t: 2 * self.n_t,
            n_x: 2 * self.n_x,
            ..*self
        }
    }
}

pub const BOUNDARY: &str = "one-sided second difference (boundary curvature copied from the neighbour)";

#[derive(Clone, Debug)]
pub struct PdeSolution {
    pub grid: PdeGrid,
    pub dim: usize,
    /// Time-level-major, then space, then component.
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub boundary: &'static str,
    pub max_residual: f64,
    source: BsviProblem,
}

impl PdeSolution {
    pub fn u(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * (self.grid.n_x + 1) + j) * self.dim;
        &self.values[at..at + self.dim]
    }

    /// `u(t, x)`, linear in `x` between nodes and in `t` between levels.
    pub fn interpolate(&self, t: f64, x: f64) -> Result<Vec<f64>> {
        let g = &self.grid;
        if !(0.0..=g.t_end).contains(&t) || !(g.x_lo..=g.x_hi).contains(&x) {
            return Err(BsviError::invalid(format!("point ({t}, {x}) lies outside the pde grid")));
        }
        let (i0, wt) = bracket(t / g.dt(), g.n_t);
        let (j0, wx) = bracket((x - g.x_lo) / g.dx(), g.n_x);
        let mut out = vec![0.0; self.dim];
        for (di, fi) in [(0, 1.0 - wt), (1, wt)] {
            for (dj, fj) in [(0, 1.0 - wx), (1, wx)] {
                if fi * fj == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(self.u(i0 + di, j0 + dj)) {
                    *o += fi * fj * v;
                }
            }
        }
        Ok(out)
    }

    /// `t,x,u1..` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|c| format!("u{c}")).collect();
        writeln!(w, "t,x,{}", header.join(","))?;
        for i in 0..=self.grid.n_t {
            for j in 0..=self.grid.n_x {
                let u: Vec<String> = self.u(i, j).iter().map(f64::to_string).collect();
                writeln!(w, "{},{},{}", self.grid.time(i), self.grid.x(j), u.join(","))?;
            }
        }
        Ok(())
    }
}

fn bracket(pos: f64, n: usize) -> (usize, f64) {
    let i = (pos.floor().max(0.0) as usize).min(n - 1);
    (i, (pos - i as f64).clamp(0.0, 1.0))
}

fn check_problem(problem: &BsviProblem) -> Result<()> {
    let c = &problem.forward.coeffs;
    if c.state_dim() != 1 || c.noise_dim() != 1 {
        return Err(BsviError::invalid("the pde solver handles one space and one noise dimension"));
    }
    if matches!(problem.terminal, Terminal::NodeValues(_)) {
        return Err(BsviError::invalid("the pde solver needs a terminal map g(x)"));
    }
    Ok(())
}

/// Backward in time: implicit diffusion of the previous level (upwind
/// drift), then the per-point penalized kernel shared with the backward
/// solver, `u + dt·H(t, u)∇φ_ε(u) − dt·F(t, x, u, σ∂_x w) = w`. The space
/// window comes from `grid`; drift, volatility, `g`, `F`, `H`, `φ` and `ε`
/// from `problem` (its time grid is ignored).
pub fn solve_pde_penalized(problem: &BsviProblem, grid: &PdeGrid) -> Result<PdeSolution> {
    problem.validate()?;
    check_problem(problem)?;
    let d = problem.dim;
    let nx = grid.n_x + 1;
    let dt = grid.dt();
    let coeffs = &problem.forward.coeffs;
    let mut values = vec![0.0; (grid.n_t + 1) * nx * d];
    let terminal_at = grid.n_t * nx * d;
    for j in 0..nx {
        let slot = &mut values[terminal_at + j * d..terminal_at + (j + 1) * d];
        problem.terminal.eval(&[grid.x(j)], slot)?;
    }
    let ctx = StepContext {
        convex: &problem.convex,
        driver: &problem.driver,
        epsilon: problem.epsilon,
        dt,
        field_bound: problem.field.constants().b,
    };
    let mut max_residual: f64 = 0.0;
    for i in (0..grid.n_t).rev() {
        let t = grid.time(i);
        let (head, tail) = values.split_at_mut((i + 1) * nx * d);
        let next = &tail[..nx * d];
        let mut b = vec![0.0; nx];
        let mut s = vec![0.0; nx];
        for j in 0..nx {
            coeffs.drift(t, &[grid.x(j)], &mut b[j..j + 1]);
            coeffs.vol(t, &[grid.x(j)], &mut s[j..j + 1]);
        }
        let mut w = vec![0.0; nx * d];
        for c in 0..d {
            let rhs: Vec<f64> = (0..nx).map(|j| next[j * d + c]).collect();
            let col = implicit_diffusion(&rhs, &b, &s, dt, grid.dx())?;
            for j in 0..nx {
                w[j * d + c] = col[j];
            }
        }
        let solved: Vec<_> = (0..nx)
            .into_par_iter()
            .map(|j| {
                let x = grid.x(j);
                let (lo, hi) = if j == 0 {
                    (0, 1)
                } else if j == nx - 1 {
                    (nx - 2, nx - 1)
                } else {
                    (j - 1, j + 1)
                };
                let z: Vec<f64> = (0..d)
                    .map(|c| s[j] * (w[hi * d + c] - w[lo * d + c]) / (grid.x(hi) - grid.x(lo)))
                    .collect();
                solve_node(&ctx, FieldSource::Live(&problem.field), t, &[x], &w[j * d..(j + 1) * d], &z)
                    .map_err(|e| match e {
                        BsviError::SchemeFailure { message, history, .. } => BsviError::SchemeFailure {
                            message: format!("time level {i} (t = {t}), x = {x}: {message}"),
                            location: Some((i, problem.epsilon, dt)),
                            history,
                        },
                        other => other,
                    })
            })
            .collect::<Result<_>>()?;
        let level = &mut head[i * nx * d..];
        for (j, node) in solved.into_iter().enumerate() {
            level[j * d..(j + 1) * d].copy_from_slice(&node.y);
            max_residual = max_residual.max(node.residual);
        }
    }
    Ok(PdeSolution {
        grid: *grid,
        dim: d,
        values,
        epsilon: problem.epsilon,
        boundary: BOUNDARY,
        max_residual,
        source: problem.clone(),
    })
}

/// Solves `(I − dt·A)w = rhs` with `A = ½σ²∂_xx + b∂_x`: central second
/// differences, upwind first differences; at the two end nodes the second
/// difference is taken one-sided (the curvature of the adjacent interior
/// stencil).
fn implicit_diffusion(rhs: &[f64], b: &[f64], s: &[f64], dt: f64, dx: f64) -> Result<Vec<f64>> {
    let n = rhs.len();
    // row j: lower[j]·w[j−1] + diag[j]·w[j] + upper[j]·w[j+1], plus the
    // extra entries of the end rows
    let mut lower = vec![0.0; n];
    let mut diag = vec![1.0; n];
    let mut upper = vec![0.0; n];
    let mut d = rhs.to_vec();
    for j in 1..n - 1 {
        let r = 0.5 * s[j] * s[j] * dt / (dx * dx);
        let up = b[j].max(0.0) * dt / dx;
        let down = (-b[j]).max(0.0) * dt / dx;
        lower[j] = -r - down;
        diag[j] = 1.0 + 2.0 * r + up + down;
        upper[j] = -r - up;
    }
    // first row: w0 − dt(½σ²(w0 − 2w1 + w2)/dx² + b(w1 − w0)/dx)
    let r0 = 0.5 * s[0] * s[0] * dt / (dx * dx);
    let b0 = b[0] * dt / dx;
    let (mut p0, mut q0, extra0) = (1.0 - r0 + b0, 2.0 * r0 - b0, -r0);
    if extra0 != 0.0 {
        if upper[1] == 0.0 {
            return Err(degenerate_stencil(0));
        }
        let f = extra0 / upper[1];
        p0 -= f * lower[1];
        q0 -= f * diag[1];
        d[0] -= f * d[1];
    }
    diag[0] = p0;
    upper[0] = q0;
    // last row: w_n − dt(½σ²(w_n − 2w_{n−1} + w_{n−2})/dx² + b(w_n − w_{n−1})/dx)
    let m = n - 1;
    let rn = 0.5 * s[m] * s[m] * dt / (dx * dx);
    let bn = b[m] * dt / dx;
    let (mut pn, mut qn, extran) = (1.0 - rn - bn, 2.0 * rn + bn, -rn);
    if extran != 0.0 {
        if lower[m - 1] == 0.0 {
            return Err(degenerate_stencil(m));
        }
        let f = extran / lower[m - 1];
        pn -= f * upper[m - 1];
        qn -= f * diag[m - 1];
        d[m] -= f * d[m - 1];
    }
    diag[m] = pn;
    lower[m] = qn;
    thomas(&lower, &diag, &upper, &d)
}

fn degenerate_stencil(j: usize) -> BsviError {
    BsviError::NumericFailure {
        message: format!("boundary row {j} cannot be reduced: the adjacent stencil has no coupling"),
        residual: f64::NAN,
    }
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    for j in 0..n {
        if j > 0 {
            pivot = diag[j] - lower[j] * c[j - 1];
        }
        if pivot.abs() < 1e-300 || !pivot.is_finite() {
            return Err(BsviError::NumericFailure {
                message: format!("zero pivot at space node {j} of the diffusion solve"),
                residual: f64::NAN,
            });
        }
        c[j] = upper[j] / pivot;
        d[j] = (rhs[j] - if j > 0 { lower[j] * d[j - 1] } else { 0.0 }) / pivot;
    }
    let mut w = d;
    for j in (0..n - 1).rev() {
        w[j] -= c[j] * w[j + 1];
    }
    Ok(w)
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FeynmanKacRow {
    pub t: f64,
    pub x: f64,
    pub pde: Vec<f64>,
    pub bsde: Vec<f64>,
    pub error: f64,
    /// `dt_pde + dx² + dt_bsde`.
    pub budget: f64,
}

/// `|u(t, x) − Y_t^{t,x}|` at each point, with `Y` from the backward solver
/// started at `(t, x)` using the step count of `problem.grid` over `[t, T]`.
pub fn compare_feynman_kac(
    pde: &PdeSolution,
    problem: &BsviProblem,
    points: &[(f64, f64)],
    backend: &Backend,
) -> Result<Vec<FeynmanKacRow>> {
    if pde.epsilon != problem.epsilon {
        return Err(BsviError::invalid(format!(
            "epsilon differs: pde {} vs problem {}",
            pde.epsilon, problem.epsilon
        )));
    }
    if !pde.source.same_data_as(problem) {
        return Err(BsviError::invalid(
            "pde and backward problem have different coefficients or data",
        ));
    }
    if (pde.grid.t_end - problem.grid.t_end()).abs() > 1e-12 {
        return Err(BsviError::invalid("pde and backward problem have different horizons"));
    }
    points
        .iter()
        .map(|&(t, x)| {
            let u = pde.interpolate(t, x)?;
            let mut local = problem.clone();
            local.grid = TimeGrid::new(t, problem.grid.t_end(), problem.grid.n_steps())?;
            local.forward = ForwardModel {
                x0: vec![x],
                coeffs: problem.forward.coeffs.clone(),
            };
            let y = solve_penalized(&local, backend)?.y0();
            let error = u.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            Ok(FeynmanKacRow {
                t,
                x,
                pde: u,
                bsde: y,
                error,
                budget: pde.grid.dt() + pde.grid.dx().powi(2) + local.grid.dt(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FeynmanKacProbe {
    pub t: f64,
    pub x: f64,
    pub pde: f64,
    pub bsde: f64,
    pub error: f64,
    /// `2(|u_h − u_{h/2}| + |Y_n − Y_{2n}|) + 1e-6`: twice the two-resolution
    /// (Richardson) error estimates of both solvers.
    pub budget: f64,
    pub passed: bool,
}

/// Runs both solvers at two resolutions and compares the finer values
/// against the Richardson budget. First components only.
pub fn feynman_kac_study(
    problem: &BsviProblem,
    grid: &PdeGrid,
    points: &[(f64, f64)],
) -> Result<Vec<FeynmanKacProbe>> {
    let coarse = solve_pde_penalized(problem, grid)?;
    let fine = solve_pde_penalized(problem, &grid.refined())?;
    let mut doubled = problem.clone();
    doubled.grid = TimeGrid::new(problem.grid.t0(), problem.grid.t_end(), 2 * problem.grid.n_steps())?;
    let rows_n = compare_feynman_kac(&coarse, problem, points, &Backend::Lattice)?;
    let rows_2n = compare_feynman_kac(&fine, &doubled, points, &Backend::Lattice)?;
    Ok(rows_n
        .iter()
        .zip(&rows_2n)
        .map(|(a, b)| {
            let budget = 2.0 * ((a.pde[0] - b.pde[0]).abs() + (a.bsde[0] - b.bsde[0]).abs()) + 1e-6;
            let error = (b.pde[0] - b.bsde[0]).abs();
            FeynmanKacProbe {
                t: b.t,
                x: b.x,
                pde: b.pde[0],
                bsde: b.bsde[0],
                error,
                budget,
                passed: error <= budget,
            }
        })
        .collect())
}
