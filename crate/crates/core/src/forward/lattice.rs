use crate::error::{BsviError, Result};

use super::TimeGrid;

/// Recombining binomial model of a standard Brownian motion started at 0 at
/// `grid.t0()`. Step `k` has `k + 1` nodes with values `(2j − k)√dt`; each
/// move is up or down with probability ½, so conditional expectations are
/// exact two-point averages.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeModel {
    grid: TimeGrid,
    sqrt_dt: f64,
}

impl LatticeModel {
    pub fn new(grid: TimeGrid) -> Self {
        Self {
            grid,
            sqrt_dt: grid.dt().sqrt(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn node_count(&self, k: usize) -> usize {
        k + 1
    }

    /// Brownian value at node `j` of step `k`.
    pub fn brownian(&self, k: usize, j: usize) -> f64 {
        (2.0 * j as f64 - k as f64) * self.sqrt_dt
    }

    pub fn brownian_values(&self, k: usize) -> Vec<f64> {
        (0..=k).map(|j| self.brownian(k, j)).collect()
    }

    /// Node probabilities `C(k, j)/2^k` at step `k`.
    pub fn probabilities(&self, k: usize) -> Vec<f64> {
        let mut p = vec![1.0];
        for _ in 0..k {
            let mut next = vec![0.0; p.len() + 1];
            for (j, v) in p.iter().enumerate() {
                next[j] += 0.5 * v;
                next[j + 1] += 0.5 * v;
            }
            p = next;
        }
        p
    }

    /// All node probability vectors for steps `0..=n`.
    pub fn all_probabilities(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_steps() + 1);
        let mut p = vec![1.0];
        out.push(p.clone());
        for _ in 0..self.n_steps() {
            let mut next = vec![0.0; p.len() + 1];
            for (j, v) in p.iter().enumerate() {
                next[j] += 0.5 * v;
                next[j + 1] += 0.5 * v;
            }
            out.push(next.clone());
            p = next;
        }
        out
    }

    /// `E_k[V_{k+1}]` for a scalar node vector at step `k + 1`:
    /// `out[j] = ½(v[j] + v[j+1])`.
    pub fn cond_expect(&self, next: &[f64]) -> Result<Vec<f64>> {
        self.cond_expect_vec(next, 1)
    }

    /// Vector-valued version; `next` is node-major with `dim` components.
    pub fn cond_expect_vec(&self, next: &[f64], dim: usize) -> Result<Vec<f64>> {
        let nodes = self.step_nodes(next, dim)?;
        if nodes < 2 {
            return Err(BsviError::invalid(
                "conditional expectation needs values at a step >= 1",
            ));
        }
        let mut out = vec![0.0; (nodes - 1) * dim];
        for j in 0..nodes - 1 {
            for c in 0..dim {
                out[j * dim + c] = 0.5 * (next[j * dim + c] + next[(j + 1) * dim + c]);
            }
        }
        Ok(out)
    }

    /// `E_k[V_{k+1} ΔB_{k+1}]` with `ΔB = ±√dt`.
    pub fn cond_expect_times_increment(&self, next: &[f64], dim: usize) -> Result<Vec<f64>> {
        let nodes = self.step_nodes(next, dim)?;
        if nodes < 2 {
            return Err(BsviError::invalid(
                "conditional expectation needs values at a step >= 1",
            ));
        }
        let mut out = vec![0.0; (nodes - 1) * dim];
        for j in 0..nodes - 1 {
            for c in 0..dim {
                out[j * dim + c] =
                    0.5 * (next[(j + 1) * dim + c] - next[j * dim + c]) * self.sqrt_dt;
            }
        }
        Ok(out)
    }

    /// `E_j[V_k]` for `k ≥ j` by repeated one-step conditioning.
    pub fn cond_expect_from(&self, values: &[f64], dim: usize, k: usize, j: usize) -> Result<Vec<f64>> {
        if j > k {
            return Err(BsviError::invalid("cannot condition on a later step"));
        }
        let mut v = values.to_vec();
        if self.step_nodes(&v, dim)? != k + 1 {
            return Err(BsviError::invalid(format!(
                "expected {} nodes at step {k}",
                k + 1
            )));
        }
        for _ in j..k {
            v = self.cond_expect_vec(&v, dim)?;
        }
        Ok(v)
    }

    /// `E[V_j | node at step k]` for `k ≥ j`: the projection of an earlier
    /// adapted quantity onto the current node, weighting the ancestors of
    /// each node by their (hypergeometric) bridge probabilities.
    pub fn bridge_project(&self, values: &[f64], dim: usize, j: usize, k: usize) -> Result<Vec<f64>> {
        if k < j {
            return Err(BsviError::invalid("bridge projection needs k >= j"));
        }
        if self.step_nodes(values, dim)? != j + 1 {
            return Err(BsviError::invalid(format!("expected {} nodes at step {j}", j + 1)));
        }
        let pj = self.probabilities(j);
        let mut mass: Vec<f64> = (0..values.len()).map(|i| values[i] * pj[i / dim]).collect();
        for _ in j..k {
            let nodes = mass.len() / dim;
            let mut next = vec![0.0; (nodes + 1) * dim];
            for n in 0..nodes {
                for c in 0..dim {
                    next[n * dim + c] += 0.5 * mass[n * dim + c];
                    next[(n + 1) * dim + c] += 0.5 * mass[n * dim + c];
                }
            }
            mass = next;
        }
        let pk = self.probabilities(k);
        for (i, m) in mass.iter_mut().enumerate() {
            *m /= pk[i / dim];
        }
        Ok(mass)
    }

    /// `E[V_k]` over the step-`k` node distribution.
    pub fn expectation(&self, values: &[f64], dim: usize, k: usize) -> Result<Vec<f64>> {
        if self.step_nodes(values, dim)? != k + 1 {
            return Err(BsviError::invalid(format!("expected {} nodes at step {k}", k + 1)));
        }
        let p = self.probabilities(k);
        let mut out = vec![0.0; dim];
        for (j, pj) in p.iter().enumerate() {
            for c in 0..dim {
                out[c] += pj * values[j * dim + c];
            }
        }
        Ok(out)
    }

    /// `E[max_k v_k]` where `v_k` is a scalar node function at every step
    /// `0..=n`. Exact: with the distinct levels `L_1 < … < L_m`,
    /// `E[max] = L_1 + Σ (L_i − L_{i−1}) P(max ≥ L_i)` and each survival
    /// probability `P(max < L)` is a forward sweep that kills paths on
    /// reaching a node with `v ≥ L`.
    pub fn expected_running_max(&self, per_step: &[Vec<f64>]) -> Result<f64> {
        let n = self.n_steps();
        if per_step.len() != n + 1 || per_step.iter().enumerate().any(|(k, v)| v.len() != k + 1) {
            return Err(BsviError::invalid(
                "running max needs one scalar value per node at every step",
            ));
        }
        let mut levels: Vec<f64> = per_step.iter().flatten().copied().collect();
        if levels.iter().any(|v| v.is_nan()) {
            return Err(BsviError::invalid("running max of NaN values"));
        }
        levels.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
        levels.dedup();
        let mut total = levels[0];
        let mut alive = vec![0.0; n + 1];
        for w in levels.windows(2) {
            let (prev, level) = (w[0], w[1]);
            // P(all v < level)
            alive.truncate(1);
            alive[0] = if per_step[0][0] < level { 1.0 } else { 0.0 };
            for k in 1..=n {
                let mut next = vec![0.0; k + 1];
                for (j, m) in alive.iter().enumerate() {
                    next[j] += 0.5 * m;
                    next[j + 1] += 0.5 * m;
                }
                for (j, m) in next.iter_mut().enumerate() {
                    if per_step[k][j] >= level {
                        *m = 0.0;
                    }
                }
                alive = next;
            }
            let survive: f64 = alive.iter().sum();
            total += (level - prev) * (1.0 - survive);
        }
        Ok(total)
    }

    fn step_nodes(&self, values: &[f64], dim: usize) -> Result<usize> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(BsviError::invalid(format!(
                "node vector length {} is not a multiple of dimension {dim}",
                values.len()
            )));
        }
        let nodes = values.len() / dim;
        if nodes == 0 || nodes > self.n_steps() + 1 {
            return Err(BsviError::invalid(format!(
                "node vector with {nodes} nodes does not match any step of a {}-step lattice",
                self.n_steps()
            )));
        }
        Ok(nodes)
    }
}

/// Builds the lattice; errors when `n_steps == 0`, which [`TimeGrid`]
/// already rules out.
pub fn build_lattice(grid: TimeGrid) -> LatticeModel {
    LatticeModel::new(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n: usize, t: f64) -> LatticeModel {
        LatticeModel::new(TimeGrid::new(0.0, t, n).unwrap())
    }

    #[test]
    fn one_step_tree() {
        let l = lattice(1, 1.0);
        assert_eq!(l.brownian_values(1), vec![-1.0, 1.0]);
        assert_eq!(l.probabilities(1), vec![0.5, 0.5]);
    }

    #[test]
    fn three_step_terminal_law() {
        let l = lattice(3, 1.0);
        let s = (1.0f64 / 3.0).sqrt();
        let b = l.brownian_values(3);
        for (v, e) in b.iter().zip([-3.0, -1.0, 1.0, 3.0]) {
            assert!((v - e * s).abs() < 1e-15);
        }
        assert_eq!(l.probabilities(3), vec![0.125, 0.375, 0.375, 0.125]);
    }

    #[test]
    fn node_counts_and_mass() {
        let l = lattice(40, 2.0);
        for k in 0..=40 {
            assert_eq!(l.brownian_values(k).len(), k + 1);
            let mass: f64 = l.probabilities(k).iter().sum();
            assert!((mass - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn martingale_and_variance() {
        let l = lattice(7, 1.0);
        let dt = l.grid().dt();
        for k in 0..7 {
            let next = l.brownian_values(k + 1);
            let e = l.cond_expect(&next).unwrap();
            let cur = l.brownian_values(k);
            for (a, b) in e.iter().zip(&cur) {
                assert!((a - b).abs() < 1e-15);
            }
            let sq: Vec<f64> = next.iter().map(|v| v * v).collect();
            let e2 = l.cond_expect(&sq).unwrap();
            for (a, b) in e2.iter().zip(&cur) {
                assert!((a - b * b - dt).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn squared_terminal_value_conditions_to_bt2_plus_remaining_time() {
        let l = lattice(6, 1.5);
        let term: Vec<f64> = l.brownian_values(6).iter().map(|b| b * b).collect();
        for k in 0..=6 {
            let v = l.cond_expect_from(&term, 1, 6, k).unwrap();
            let t = l.grid().time(k);
            for (j, got) in v.iter().enumerate() {
                let b = l.brownian(k, j);
                assert!((got - (b * b + 1.5 - t)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn constants_are_preserved() {
        let l = lattice(5, 1.0);
        assert_eq!(l.cond_expect(&[2.5; 6]).unwrap(), vec![2.5; 5]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let l = lattice(3, 1.0);
        assert!(l.cond_expect(&[1.0]).is_err());
        assert!(l.cond_expect(&[1.0; 6]).is_err());
        assert!(l.cond_expect_vec(&[1.0; 5], 2).is_err());
    }

    #[test]
    fn increment_expectation_extracts_unit_z_for_brownian() {
        let l = lattice(4, 1.0);
        let dt = l.grid().dt();
        let e = l.cond_expect_times_increment(&l.brownian_values(4), 1).unwrap();
        for v in e {
            assert!((v / dt - 1.0).abs() < 1e-14);
        }
    }

    fn enumerate_paths(n: usize) -> Vec<Vec<usize>> {
        (0..1usize << n)
            .map(|bits| {
                let mut j = 0;
                let mut path = vec![0];
                for s in 0..n {
                    j += (bits >> s) & 1;
                    path.push(j);
                }
                path
            })
            .collect()
    }

    #[test]
    fn running_max_matches_path_enumeration() {
        let n = 9;
        let l = lattice(n, 1.0);
        let per_step: Vec<Vec<f64>> = (0..=n)
            .map(|k| {
                (0..=k)
                    .map(|j| ((j as f64 * 1.3 - k as f64 * 0.4).sin() + 0.1 * k as f64).powi(2))
                    .collect()
            })
            .collect();
        let paths = enumerate_paths(n);
        let brute: f64 = paths
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(k, &j)| per_step[k][j])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / paths.len() as f64;
        let exact = l.expected_running_max(&per_step).unwrap();
        assert!((brute - exact).abs() < 1e-12, "{brute} vs {exact}");
    }

    #[test]
    fn bridge_projection_matches_enumeration() {
        let n = 8;
        let l = lattice(n, 1.0);
        let (j, k) = (3, 7);
        let vals: Vec<f64> = (0..=j).map(|i| (i as f64).powi(2) - 1.0).collect();
        let proj = l.bridge_project(&vals, 1, j, k).unwrap();
        let paths = enumerate_paths(n);
        for node in 0..=k {
            let hits: Vec<&Vec<usize>> = paths.iter().filter(|p| p[k] == node).collect();
            let mean = hits.iter().map(|p| vals[p[j]]).sum::<f64>() / hits.len() as f64;
            assert!((mean - proj[node]).abs() < 1e-12);
        }
    }

    #[test]
    fn bridge_projection_of_same_step_is_identity() {
        let l = lattice(4, 1.0);
        let v = vec![1.0, -2.0, 3.5];
        let p = l.bridge_project(&v, 1, 2, 2).unwrap();
        for (a, b) in p.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
