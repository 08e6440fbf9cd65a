use std::io::Write;

use serde::Serialize;

use crate::bsde::problem::ProblemShift;
use crate::error::{BsviError, Result};
use crate::forward::{LatticeModel, PathEnsemble, TimeGrid};

/// Index space of a solution: lattice nodes or simulated paths.
#[derive(Clone, Debug)]
pub enum SolutionLayout {
    Lattice(LatticeModel),
    Paths(PathEnsemble),
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SolveMetadata {
    pub backend: String,
    pub epsilon: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub dim: usize,
    pub noise_dim: usize,
    /// Largest per-node iteration count.
    pub max_iterations: usize,
    pub total_iterations: usize,
    /// Largest one-step residual over all nodes.
    pub max_residual: f64,
    pub notes: Vec<String>,
}

/// `(Y, Z, U, K)` on the grid.
///
/// Every process is stored per step as a flat node-major (or path-major)
/// vector. `Z` has `n_steps` entries (none at the terminal step), the others
/// `n_steps + 1`. On the lattice `K` is path-dependent; the stored values are
/// its conditional means `E[K_k | node]`, see [`BackwardSolution::k_along_path`]
/// for pathwise values.
#[derive(Clone, Debug)]
pub struct BackwardSolution {
    pub layout: SolutionLayout,
    pub dim: usize,
    pub noise_dim: usize,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub metadata: SolveMetadata,
}

impl BackwardSolution {
    pub fn grid(&self) -> &TimeGrid {
        match &self.layout {
            SolutionLayout::Lattice(l) => l.grid(),
            SolutionLayout::Paths(e) => &e.grid,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.y.len() - 1
    }

    pub fn lattice(&self) -> Option<&LatticeModel> {
        match &self.layout {
            SolutionLayout::Lattice(l) => Some(l),
            SolutionLayout::Paths(_) => None,
        }
    }

    pub fn ensemble(&self) -> Option<&PathEnsemble> {
        match &self.layout {
            SolutionLayout::Paths(e) => Some(e),
            SolutionLayout::Lattice(_) => None,
        }
    }

    /// Nodes (lattice) or paths (ensemble) at step `k`.
    pub fn nodes(&self, k: usize) -> usize {
        self.y[k].len() / self.dim
    }

    pub fn y_at(&self, k: usize, node: usize) -> &[f64] {
        &self.y[k][node * self.dim..(node + 1) * self.dim]
    }

    pub fn u_at(&self, k: usize, node: usize) -> &[f64] {
        &self.u[k][node * self.dim..(node + 1) * self.dim]
    }

    pub fn z_at(&self, k: usize, node: usize) -> &[f64] {
        let w = self.dim * self.noise_dim;
        &self.z[k][node * w..(node + 1) * w]
    }

    /// `Y_0`; on an ensemble the average over paths.
    pub fn y0(&self) -> Vec<f64> {
        let n = self.nodes(0);
        let mut out = vec![0.0; self.dim];
        for p in 0..n {
            for (o, v) in out.iter_mut().zip(self.y_at(0, p)) {
                *o += v / n as f64;
            }
        }
        out
    }

    /// Pathwise `K_0, …, K_n` along a lattice path; `moves[k]` is true for
    /// an up move between steps `k` and `k + 1`.
    pub fn k_along_path(&self, moves: &[bool]) -> Result<Vec<Vec<f64>>> {
        if self.lattice().is_none() {
            return Err(BsviError::invalid("pathwise K needs a lattice solution"));
        }
        if moves.len() != self.n_steps() {
            return Err(BsviError::dim_mismatch("lattice path", self.n_steps(), moves.len()));
        }
        let dt = self.grid().dt();
        let mut node = 0;
        let mut k = vec![0.0; self.dim];
        let mut out = vec![k.clone()];
        for (step, up) in moves.iter().enumerate() {
            for (acc, u) in k.iter_mut().zip(self.u_at(step, node)) {
                *acc += u * dt;
            }
            out.push(k.clone());
            if *up {
                node += 1;
            }
        }
        Ok(out)
    }

    /// Undoes [`BsviProblem::normalize`](crate::bsde::BsviProblem::normalize):
    /// `Y += base`, `U += slope`, `K_t += slope·(t − t0)`.
    pub fn denormalize(mut self, shift: &ProblemShift) -> Self {
        let d = self.dim;
        let grid = *self.grid();
        for step in 0..self.y.len() {
            let elapsed = grid.time(step) - grid.t0();
            for (i, v) in self.y[step].iter_mut().enumerate() {
                *v += shift.base[i % d];
            }
            for (i, v) in self.u[step].iter_mut().enumerate() {
                *v += shift.slope[i % d];
            }
            for (i, v) in self.k[step].iter_mut().enumerate() {
                *v += shift.slope[i % d] * elapsed;
            }
        }
        self
    }

    /// One row per step and node/path:
    /// `step,node_or_path,t,y1..,z1_1..,u1..,k1..`; `Z` is blank at the
    /// terminal step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim;
        let m = self.noise_dim;
        let mut header = vec!["step".to_string(), "node_or_path".into(), "t".into()];
        header.extend((1..=d).map(|i| format!("y{i}")));
        for i in 1..=d {
            header.extend((1..=m).map(|c| format!("z{i}_{c}")));
        }
        header.extend((1..=d).map(|i| format!("u{i}")));
        header.extend((1..=d).map(|i| format!("k{i}")));
        writeln!(w, "{}", header.join(","))?;
        let grid = *self.grid();
        for step in 0..self.y.len() {
            for node in 0..self.nodes(step) {
                let mut row = vec![step.to_string(), node.to_string(), grid.time(step).to_string()];
                row.extend(self.y_at(step, node).iter().map(f64::to_string));
                if step < self.z.len() {
                    row.extend(self.z_at(step, node).iter().map(f64::to_string));
                } else {
                    row.extend(std::iter::repeat_n(String::new(), d * m));
                }
                row.extend(self.u_at(step, node).iter().map(f64::to_string));
                row.extend(self.k[step][node * d..(node + 1) * d].iter().map(f64::to_string));
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }

    pub fn metadata_json(&self) -> String {
        serde_json::to_string_pretty(&self.metadata).expect("metadata serializes")
    }
}
