use rayon::prelude::*;

use crate::bsde::problem::{BsviProblem, Terminal};
use crate::bsde::regression::{step_features, Regressor};
use crate::bsde::solution::{BackwardSolution, SolutionLayout, SolveMetadata};
use crate::bsde::step::{solve_node, FieldSource, NodeSolution, StepContext};
use crate::error::{BsviError, Result};
use crate::forward::{build_lattice, simulate_paths, Coefficients, LatticeModel, PathEnsemble};

/// Conditional-expectation backend of a backward sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    /// Exact conditional expectations on the binomial lattice.
    Lattice,
    /// Least-squares Monte Carlo over simulated paths of the forward model.
    Ensemble {
        n_paths: usize,
        seed: u64,
        degree: usize,
    },
}

/// The conditional-expectation operator handed to [`backward_step`].
#[derive(Clone, Copy, Debug)]
pub enum CondExpectation<'a> {
    Lattice(&'a LatticeModel),
    Ensemble {
        ensemble: &'a PathEnsemble,
        degree: usize,
        include_brownian: bool,
    },
}

/// `(Y_k, Z_k, U_k)` on every node/path of step `k`, with the worst
/// per-node iteration count and residual.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub max_iterations: usize,
    pub total_iterations: usize,
    pub max_residual: f64,
}

/// One backward step: `Z_k = E_k[Y_{k+1}ΔB_{k+1}]/dt` first, then per node
/// the implicit equation
///
/// ```text
/// Y_k + dt·H(t_k, Y_k)∇φ_ε(Y_k) = E_k[Y_{k+1}] + dt·F(t_k, X_k, Y_k, Z_k)
/// ```
///
/// and `U_k = ∇φ_ε(Y_k)`.
pub fn backward_step(
    problem: &BsviProblem,
    k: usize,
    y_next: &[f64],
    cond: CondExpectation<'_>,
) -> Result<StepOutput> {
    step_with_field(problem, k, y_next, cond, None)
}

/// Backward step where `frozen` (per node, row-major `d × d`) replaces the
/// field when given.
pub(crate) fn step_with_field(
    problem: &BsviProblem,
    k: usize,
    y_next: &[f64],
    cond: CondExpectation<'_>,
    frozen: Option<&[f64]>,
) -> Result<StepOutput> {
    let d = problem.dim;
    if k >= problem.grid.n_steps() {
        return Err(BsviError::invalid(format!(
            "step {k} has no successor on a grid of {} steps",
            problem.grid.n_steps()
        )));
    }
    if let Some(i) = y_next.iter().position(|v| !v.is_finite()) {
        return Err(BsviError::invalid(format!(
            "non-finite value at step {} entry {i}",
            k + 1
        )));
    }
    let dt = problem.grid.dt();
    let t = problem.grid.time(k);
    let ctx = StepContext {
        convex: &problem.convex,
        driver: &problem.driver,
        epsilon: problem.epsilon,
        dt,
        field_bound: problem.field.constants().b,
    };
    let (cond_mean, z, states, noise) = match cond {
        CondExpectation::Lattice(lattice) => {
            let mean = lattice.cond_expect_vec(y_next, d)?;
            let z: Vec<f64> = lattice
                .cond_expect_times_increment(y_next, d)?
                .into_iter()
                .map(|v| v / dt)
                .collect();
            (mean, z, lattice_states(problem, lattice, k), 1)
        }
        CondExpectation::Ensemble {
            ensemble,
            degree,
            include_brownian,
        } => {
            let m = ensemble.noise_dim;
            let (features, width) = step_features(ensemble, k, include_brownian);
            let regressor = Regressor::new(&features, width, degree)?;
            let mean = regressor.project(y_next, d)?;
            let mut weighted = vec![0.0; ensemble.n_paths * d * m];
            for p in 0..ensemble.n_paths {
                let inc = ensemble.increment(p, k);
                for i in 0..d {
                    for c in 0..m {
                        weighted[(p * d + i) * m + c] = y_next[p * d + i] * inc[c] / dt;
                    }
                }
            }
            let z = regressor.project(&weighted, d * m)?;
            (mean, z, ensemble.states_at(k), m)
        }
    };

    let nodes = cond_mean.len() / d;
    let n_state = states.len() / nodes;
    let zw = d * noise;
    if let Some(f) = frozen {
        if f.len() != nodes * d * d {
            return Err(BsviError::dim_mismatch("frozen field", nodes * d * d, f.len()));
        }
    }
    let solve = |j: usize| -> Result<NodeSolution> {
        let field = match frozen {
            Some(f) => FieldSource::Frozen(&f[j * d * d..(j + 1) * d * d]),
            None => FieldSource::Live(&problem.field),
        };
        solve_node(
            &ctx,
            field,
            t,
            &states[j * n_state..(j + 1) * n_state],
            &cond_mean[j * d..(j + 1) * d],
            &z[j * zw..(j + 1) * zw],
        )
        .map_err(|e| locate(e, k, problem.epsilon, dt))
    };
    let solved: Vec<NodeSolution> = match cond {
        CondExpectation::Lattice(_) => (0..nodes).map(solve).collect::<Result<_>>()?,
        CondExpectation::Ensemble { .. } => {
            (0..nodes).into_par_iter().map(solve).collect::<Result<_>>()?
        }
    };

    let mut out = StepOutput {
        y: Vec::with_capacity(nodes * d),
        z,
        u: Vec::with_capacity(nodes * d),
        max_iterations: 0,
        total_iterations: 0,
        max_residual: 0.0,
    };
    for s in solved {
        out.y.extend_from_slice(&s.y);
        out.u.extend_from_slice(&s.u);
        out.max_iterations = out.max_iterations.max(s.iterations);
        out.total_iterations += s.iterations;
        out.max_residual = out.max_residual.max(s.residual);
    }
    Ok(out)
}

/// Forward states at the nodes of lattice step `k`, node-major.
pub(crate) fn lattice_states(problem: &BsviProblem, lattice: &LatticeModel, k: usize) -> Vec<f64> {
    let n_state = problem.forward.state_dim();
    let elapsed = problem.grid.time(k) - problem.grid.t0();
    let mut states = vec![0.0; (k + 1) * n_state];
    for j in 0..=k {
        problem.forward.lattice_state(
            elapsed,
            lattice.brownian(k, j),
            &mut states[j * n_state..(j + 1) * n_state],
        );
    }
    states
}

fn locate(err: BsviError, k: usize, epsilon: f64, dt: f64) -> BsviError {
    match err {
        BsviError::SchemeFailure {
            message, history, ..
        } => BsviError::SchemeFailure {
            message: format!("step {k}: {message}"),
            location: Some((k, epsilon, dt)),
            history,
        },
        other => other,
    }
}

/// Full backward sweep from the terminal step to step 0.
pub fn solve_penalized(problem: &BsviProblem, backend: &Backend) -> Result<BackwardSolution> {
    problem.validate()?;
    match backend {
        Backend::Lattice => solve_on_lattice(problem, None),
        Backend::Ensemble {
            n_paths,
            seed,
            degree,
        } => solve_on_ensemble(problem, *n_paths, *seed, *degree),
    }
}

fn check_lattice_forward(problem: &BsviProblem) -> Result<()> {
    let c = &problem.forward.coeffs;
    if c.noise_dim() != 1 || !c.is_constant() {
        return Err(BsviError::invalid(
            "the lattice backend needs constant forward coefficients driven by one Brownian motion",
        ));
    }
    Ok(())
}

/// Terminal values at the nodes of the final lattice step.
pub(crate) fn lattice_terminal(problem: &BsviProblem, lattice: &LatticeModel) -> Result<Vec<f64>> {
    let d = problem.dim;
    let n = lattice.n_steps();
    let values = match &problem.terminal {
        Terminal::NodeValues(v) => {
            if v.len() != (n + 1) * d {
                return Err(BsviError::dim_mismatch("terminal node values", (n + 1) * d, v.len()));
            }
            v.clone()
        }
        map => {
            let mut out = vec![0.0; (n + 1) * d];
            let mut x = vec![0.0; problem.forward.state_dim()];
            for j in 0..=n {
                problem
                    .forward
                    .lattice_state(problem.grid.horizon(), lattice.brownian(n, j), &mut x);
                map.eval(&x, &mut out[j * d..(j + 1) * d])?;
            }
            out
        }
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(BsviError::invalid(format!(
            "terminal value at node {} is not finite",
            i / d
        )));
    }
    Ok(values)
}

/// Lattice sweep; `frozen[k]` (per node, row-major `d × d`) replaces the
/// field at step `k` when given.
pub(crate) fn solve_on_lattice(
    problem: &BsviProblem,
    frozen: Option<&[Vec<f64>]>,
) -> Result<BackwardSolution> {
    check_lattice_forward(problem)?;
    let lattice = build_lattice(problem.grid);
    let n = problem.grid.n_steps();
    let d = problem.dim;
    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    let mut u = vec![Vec::new(); n + 1];
    y[n] = lattice_terminal(problem, &lattice)?;
    u[n] = terminal_gradient(problem, &y[n])?;
    let mut meta = metadata(problem, "lattice", 1);
    for k in (0..n).rev() {
        let step = step_with_field(
            problem,
            k,
            &y[k + 1],
            CondExpectation::Lattice(&lattice),
            frozen.map(|f| f[k].as_slice()),
        )?;
        record(&mut meta, &step);
        y[k] = step.y;
        z[k] = step.z;
        u[k] = step.u;
    }
    let k = lattice_k_means(&u, d, problem.grid.dt());
    Ok(BackwardSolution {
        layout: SolutionLayout::Lattice(lattice),
        dim: d,
        noise_dim: 1,
        y,
        z,
        u,
        k,
        metadata: meta,
    })
}

fn solve_on_ensemble(
    problem: &BsviProblem,
    n_paths: usize,
    seed: u64,
    degree: usize,
) -> Result<BackwardSolution> {
    if matches!(problem.terminal, Terminal::NodeValues(_)) {
        return Err(BsviError::invalid(
            "raw lattice terminal values cannot drive the ensemble backend",
        ));
    }
    let c = &problem.forward.coeffs;
    let ensemble = simulate_paths(c, &problem.forward.x0, problem.grid, n_paths, seed)?;
    let include_brownian = !c.is_constant();
    let n = problem.grid.n_steps();
    let d = problem.dim;
    let m = ensemble.noise_dim;
    let mut terminal = vec![0.0; n_paths * d];
    for p in 0..n_paths {
        problem
            .terminal
            .eval(ensemble.state(p, n), &mut terminal[p * d..(p + 1) * d])?;
    }
    if let Some(i) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(BsviError::invalid(format!(
            "terminal value on path {} is not finite",
            i / d
        )));
    }
    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    let mut u = vec![Vec::new(); n + 1];
    u[n] = terminal_gradient(problem, &terminal)?;
    y[n] = terminal;
    let mut meta = metadata(problem, "ensemble", m);
    for k in (0..n).rev() {
        let step = backward_step(
            problem,
            k,
            &y[k + 1],
            CondExpectation::Ensemble {
                ensemble: &ensemble,
                degree,
                include_brownian,
            },
        )?;
        record(&mut meta, &step);
        y[k] = step.y;
        z[k] = step.z;
        u[k] = step.u;
    }
    let dt = problem.grid.dt();
    let mut kk = vec![vec![0.0; n_paths * d]; n + 1];
    for step in 0..n {
        let next: Vec<f64> = kk[step].iter().zip(&u[step]).map(|(a, v)| a + v * dt).collect();
        kk[step + 1] = next;
    }
    Ok(BackwardSolution {
        layout: SolutionLayout::Paths(ensemble),
        dim: d,
        noise_dim: m,
        y,
        z,
        u,
        k: kk,
        metadata: meta,
    })
}

fn terminal_gradient(problem: &BsviProblem, values: &[f64]) -> Result<Vec<f64>> {
    let d = problem.dim;
    let mut out = vec![0.0; values.len()];
    for (v, o) in values.chunks(d).zip(out.chunks_mut(d)) {
        problem.convex.moreau_gradient_into(v, problem.epsilon, o)?;
    }
    Ok(out)
}

fn metadata(problem: &BsviProblem, backend: &str, noise_dim: usize) -> SolveMetadata {
    SolveMetadata {
        backend: backend.into(),
        epsilon: problem.epsilon,
        dt: problem.grid.dt(),
        n_steps: problem.grid.n_steps(),
        dim: problem.dim,
        noise_dim,
        max_iterations: 0,
        total_iterations: 0,
        max_residual: 0.0,
        notes: problem.scope_notes(),
    }
}

fn record(meta: &mut SolveMetadata, step: &StepOutput) {
    meta.max_iterations = meta.max_iterations.max(step.max_iterations);
    meta.total_iterations += step.total_iterations;
    meta.max_residual = meta.max_residual.max(step.max_residual);
}

/// `E[K_k | node]` from `K_{k+1} = K_k + U_k dt`, averaging over the two
/// possible parents of each node with their bridge weights.
pub(crate) fn lattice_k_means(u: &[Vec<f64>], d: usize, dt: f64) -> Vec<Vec<f64>> {
    let n = u.len() - 1;
    let mut k = vec![vec![0.0; d]];
    for step in 0..n {
        let prev = &k[step];
        let mut next = vec![0.0; (step + 2) * d];
        for j in 0..=step + 1 {
            let denom = (step + 1) as f64;
            for c in 0..d {
                let mut acc = 0.0;
                if j >= 1 {
                    let i = j - 1;
                    acc += j as f64 / denom * (prev[i * d + c] + u[step][i * d + c] * dt);
                }
                if j <= step {
                    acc += (step + 1 - j) as f64 / denom
                        * (prev[j * d + c] + u[step][j * d + c] * dt);
                }
                next[j * d + c] = acc;
            }
        }
        k.push(next);
    }
    k
}
