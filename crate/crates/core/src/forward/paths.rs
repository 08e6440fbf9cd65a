use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{BsviError, Result};

use super::TimeGrid;

/// Drift `b(t, x)` and volatility `σ(t, x)` of the forward diffusion
/// `dX = b dt + σ dB`. Implementations must be re-entrant.
pub trait Coefficients: Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// `σ(t, x)` written row-major as `state_dim × noise_dim`.
    fn vol(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// `b(x) = A x + c`, `σ(x)_{ij} = S_{ij} + G_{ij} x_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCoefficients {
    pub drift_matrix: DMatrix<f64>,
    pub drift_offset: Vec<f64>,
    pub vol_offset: DMatrix<f64>,
    pub vol_scale: DMatrix<f64>,
}

impl AffineCoefficients {
    /// Constant `b = mu`, `σ = sigma` in one dimension.
    pub fn scalar(mu: f64, sigma: f64) -> Self {
        Self {
            drift_matrix: DMatrix::zeros(1, 1),
            drift_offset: vec![mu],
            vol_offset: DMatrix::from_element(1, 1, sigma),
            vol_scale: DMatrix::zeros(1, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.drift_offset.len();
        let m = self.vol_offset.ncols();
        if n == 0 || m == 0 {
            return Err(BsviError::invalid("affine coefficients need state and noise dims >= 1"));
        }
        if self.drift_matrix.shape() != (n, n)
            || self.vol_offset.nrows() != n
            || self.vol_scale.shape() != (n, m)
        {
            return Err(BsviError::invalid("affine coefficient shapes are inconsistent"));
        }
        Ok(())
    }

    /// Constant drift and volatility (no state dependence).
    pub fn is_constant(&self) -> bool {
        self.drift_matrix.iter().all(|v| *v == 0.0) && self.vol_scale.iter().all(|v| *v == 0.0)
    }
}

impl Coefficients for AffineCoefficients {
    fn state_dim(&self) -> usize {
        self.drift_offset.len()
    }

    fn noise_dim(&self) -> usize {
        self.vol_offset.ncols()
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.drift_offset[i]
                + (0..x.len()).map(|j| self.drift_matrix[(i, j)] * x[j]).sum::<f64>();
        }
    }

    fn vol(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let m = self.noise_dim();
        for i in 0..x.len() {
            for j in 0..m {
                out[i * m + j] = self.vol_offset[(i, j)] + self.vol_scale[(i, j)] * x[i];
            }
        }
    }
}

/// Monte-Carlo paths on a uniform grid. Buffers are path-major:
/// `increments[(p·n_steps + k)·m + c]` is `ΔB_{k+1}` component `c` of
/// path `p`; `states[(p·(n_steps+1) + k)·n + i]` is `X_{t_k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub seed: u64,
    pub increments: Vec<f64>,
    pub states: Vec<f64>,
}

impl PathEnsemble {
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let n = self.state_dim;
        let start = (path * (self.grid.n_steps() + 1) + k) * n;
        &self.states[start..start + n]
    }

    /// `ΔB_{k+1} = B_{t_{k+1}} − B_{t_k}`.
    pub fn increment(&self, path: usize, k: usize) -> &[f64] {
        let m = self.noise_dim;
        let start = (path * self.grid.n_steps() + k) * m;
        &self.increments[start..start + m]
    }

    /// `B_{t_k}` along a path (cumulative increments).
    pub fn brownian(&self, path: usize, k: usize) -> Vec<f64> {
        let mut b = vec![0.0; self.noise_dim];
        for s in 0..k {
            for (acc, v) in b.iter_mut().zip(self.increment(path, s)) {
                *acc += v;
            }
        }
        b
    }

    /// All `B_{t_k}` at step `k`, path-major.
    pub fn brownian_at(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths).flat_map(|p| self.brownian(p, k)).collect()
    }

    /// All `X_{t_k}` at step `k`, path-major.
    pub fn states_at(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths)
            .flat_map(|p| self.state(p, k).to_vec())
            .collect()
    }

    /// CSV dump: one row per path per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["path".to_string(), "step".into(), "t".into()];
        header.extend((1..=self.state_dim).map(|i| format!("x{i}")));
        header.extend((1..=self.noise_dim).map(|i| format!("db{i}")));
        writeln!(w, "{}", header.join(","))?;
        for p in 0..self.n_paths {
            for k in 0..=self.grid.n_steps() {
                let mut row = vec![p.to_string(), k.to_string(), format!("{}", self.grid.time(k))];
                row.extend(self.state(p, k).iter().map(|v| format!("{v}")));
                if k == 0 {
                    row.extend(std::iter::repeat_n(String::new(), self.noise_dim));
                } else {
                    row.extend(self.increment(p, k - 1).iter().map(|v| format!("{v}")));
                }
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// Per-path generator: ChaCha keyed by the master seed, one stream per path,
/// so the draws of a path do not depend on scheduling.
fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Euler–Maruyama `X_{k+1} = X_k + b(t_k, X_k) dt + σ(t_k, X_k) ΔB_{k+1}`
/// from `x0` over `grid`. Paths are simulated in parallel; the result is
/// bit-identical for any thread count.
pub fn simulate_paths(
    coeffs: &dyn Coefficients,
    x0: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let n = coeffs.state_dim();
    let m = coeffs.noise_dim();
    if x0.len() != n {
        return Err(BsviError::dim_mismatch("initial state", n, x0.len()));
    }
    if n_paths == 0 {
        return Err(BsviError::invalid("need at least one path"));
    }
    let steps = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut increments = vec![0.0; n_paths * steps * m];
    let mut states = vec![0.0; n_paths * (steps + 1) * n];

    let failures: Vec<Option<(usize, usize)>> = increments
        .par_chunks_mut(steps * m)
        .zip(states.par_chunks_mut((steps + 1) * n))
        .enumerate()
        .map(|(p, (inc, xs))| {
            let mut rng = path_rng(seed, p);
            let mut drift = vec![0.0; n];
            let mut vol = vec![0.0; n * m];
            xs[..n].copy_from_slice(x0);
            for k in 0..steps {
                for v in inc[k * m..(k + 1) * m].iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z * sqrt_dt;
                }
                let (cur, next) = xs[k * n..(k + 2) * n].split_at_mut(n);
                let t = grid.time(k);
                coeffs.drift(t, cur, &mut drift);
                coeffs.vol(t, cur, &mut vol);
                if drift.iter().chain(&vol).any(|v| !v.is_finite()) {
                    return Some((p, k));
                }
                for i in 0..n {
                    let mut x = cur[i] + drift[i] * dt;
                    for c in 0..m {
                        x += vol[i * m + c] * inc[k * m + c];
                    }
                    next[i] = x;
                }
            }
            None
        })
        .collect();
    if let Some((p, k)) = failures.into_iter().flatten().next() {
        return Err(BsviError::NumericFailure {
            message: format!("non-finite coefficient on path {p} at step {k}"),
            residual: f64::NAN,
        });
    }
    Ok(PathEnsemble {
        grid,
        n_paths,
        state_dim: n,
        noise_dim: m,
        seed,
        increments,
        states,
    })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct MomentReport {
    pub p: f64,
    /// Empirical `E sup_k |X_{t_k}|^p`.
    pub expected_sup: f64,
    pub standard_error: f64,
    /// `E sup |X|^p / (1 + |x_ref|^p)`.
    pub implied_constant: f64,
    pub n_paths: usize,
}

/// Empirical running-sup moment of an ensemble. Informational only: the
/// constant in the moment bound has no numeric value to compare against.
pub fn moment_report(ensemble: &PathEnsemble, p: f64, x_ref: &[f64]) -> Result<MomentReport> {
    if !(p >= 1.0) {
        return Err(BsviError::invalid("moment order p must be >= 1"));
    }
    let sups: Vec<f64> = (0..ensemble.n_paths)
        .map(|path| {
            (0..=ensemble.grid.n_steps())
                .map(|k| {
                    let x = ensemble.state(path, k);
                    x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let n = sups.len() as f64;
    let mean = sups.iter().sum::<f64>() / n;
    let var = if sups.len() > 1 {
        sups.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let xr = x_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(MomentReport {
        p,
        expected_sup: mean,
        standard_error: (var / n).sqrt(),
        implied_constant: mean / (1.0 + xr.powf(p)),
        n_paths: ensemble.n_paths,
    })
}
