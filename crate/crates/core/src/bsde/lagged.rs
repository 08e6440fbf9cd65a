use crate::bsde::problem::BsviProblem;
use crate::bsde::solution::BackwardSolution;
use crate::bsde::solve::solve_on_lattice;
use crate::convex::ConvexSpec;
use crate::error::{BsviError, Result};
use crate::forward::{build_lattice, LatticeModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaggedOptions {
    /// Number of partition intervals; must divide the number of grid steps.
    pub partition: usize,
    /// Forward shift of the state argument, in partition intervals.
    pub lag: usize,
    pub max_sweeps: usize,
    /// Stop once successive sweeps differ by at most this much (sup norm).
    pub tolerance: f64,
}

impl LaggedOptions {
    pub fn new(partition: usize) -> Self {
        Self {
            partition,
            lag: 2,
            max_sweeps: 20,
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LaggedSolution {
    pub solution: BackwardSolution,
    pub sweeps: usize,
    /// Sup-difference between each sweep and its predecessor.
    pub sweep_differences: Vec<f64>,
}

/// Partition scheme for state-dependent fields: each sweep freezes the
/// field at every step `k` to the trailing-interval average
///
/// ```text
/// H_k = (1/m) Σ_{j = k−m+1..k} E[ E_j[ H(t_j, Y_{j + lag·m}) ] | node at k ]
/// ```
///
/// over the `m` grid steps of one partition interval, with `Y` from the
/// previous sweep (the first sweep uses an unconstrained pre-sweep) and
/// `Y_j = η` past the horizon. Within a sweep the field is a fixed function
/// of the node, so the ordinary lattice sweep applies. Because the frozen
/// field only looks strictly ahead, the sweeps settle after finitely many
/// iterations.
pub fn solve_lagged_h(problem: &BsviProblem, options: LaggedOptions) -> Result<LaggedSolution> {
    problem.validate()?;
    let n = problem.grid.n_steps();
    if options.partition == 0 || !n.is_multiple_of(options.partition) {
        return Err(BsviError::invalid(format!(
            "partition {} does not divide the {n} grid steps",
            options.partition
        )));
    }
    if options.lag == 0 {
        return Err(BsviError::invalid("the lag must be at least one partition interval"));
    }
    let m = n / options.partition;
    let shift = options.lag * m;
    let lattice = build_lattice(problem.grid);

    let mut unconstrained = problem.clone();
    unconstrained.convex = ConvexSpec::zero(problem.dim);
    let mut previous = solve_on_lattice(&unconstrained, None)?;
    let mut history = Vec::new();
    for sweep in 0..options.max_sweeps {
        let frozen = frozen_field(problem, &lattice, &previous.y, m, shift)?;
        let mut current = solve_on_lattice(problem, Some(&frozen))?;
        if sweep > 0 {
            let diff = sup_difference(&current.y, &previous.y);
            history.push(diff);
            if diff <= options.tolerance {
                current.metadata.notes.push(format!(
                    "lagged field: partition {}, lag {}, {} sweeps",
                    options.partition,
                    options.lag,
                    sweep + 1
                ));
                return Ok(LaggedSolution {
                    solution: current,
                    sweeps: sweep + 1,
                    sweep_differences: history,
                });
            }
        }
        previous = current;
    }
    Err(BsviError::SchemeFailure {
        message: format!(
            "lagged-field sweeps did not settle below {} in {} sweeps",
            options.tolerance, options.max_sweeps
        ),
        location: None,
        history,
    })
}

pub fn sup_difference(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Frozen matrices per step and node (row-major `d × d` each).
fn frozen_field(
    problem: &BsviProblem,
    lattice: &LatticeModel,
    y: &[Vec<f64>],
    m: usize,
    shift: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = problem.grid.n_steps();
    let d = problem.dim;
    let dd = d * d;
    // inner[j + m - 1] = (conditioning step, E_c[H(t_c, Y_f)]) for j = 1-m..n-1
    let mut inner = Vec::with_capacity(n + m);
    for j in -(m as isize) + 1..n as isize {
        let c = j.max(0) as usize;
        let f = (j + shift as isize).clamp(0, n as isize) as usize;
        let t = problem.grid.time(c);
        let mut values = Vec::with_capacity((f + 1) * dd);
        for node in 0..=f {
            let h = problem.field.matrix(t, &y[f][node * d..(node + 1) * d]);
            for r in 0..d {
                for s in 0..d {
                    values.push(h[(r, s)]);
                }
            }
        }
        inner.push((c, lattice.cond_expect_from(&values, dd, f, c)?));
    }
    let mut frozen = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = vec![0.0; (k + 1) * dd];
        for j in k as isize - m as isize + 1..=k as isize {
            let (c, values) = &inner[(j + m as isize - 1) as usize];
            let projected = lattice.bridge_project(values, dd, *c, k)?;
            acc.iter_mut().zip(&projected).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= m as f64);
        frozen.push(acc);
    }
    Ok(frozen)
}
