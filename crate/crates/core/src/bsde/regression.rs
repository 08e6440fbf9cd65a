use nalgebra::{DMatrix, DVector};

use crate::error::{BsviError, Result};
use crate::forward::PathEnsemble;

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 5;
const RIDGE_FLOOR: f64 = 1e-12;

/// Least-squares projection onto polynomials (total degree `≤ degree`) of
/// per-path features. The normal matrix is factored once and reused for
/// every right-hand side.
#[derive(Clone, Debug)]
pub struct Regressor {
    n_paths: usize,
    design: DMatrix<f64>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

/// Exponent vectors of all monomials in `n_vars` variables of total degree
/// `≤ degree`, constant first.
pub fn monomial_exponents(n_vars: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; n_vars]];
    if n_vars == 0 {
        return out;
    }
    for total in 1..=degree {
        let mut current = vec![0; n_vars];
        fill(&mut out, &mut current, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, var: usize, remaining: usize) {
    if var + 1 == current.len() {
        current[var] = remaining;
        out.push(current.clone());
        current[var] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e;
        fill(out, current, var + 1, remaining - e);
    }
    current[var] = 0;
}

impl Regressor {
    /// `features` is path-major with `n_features` values per path. Features
    /// with zero spread are dropped (they only duplicate the constant), the
    /// rest are standardized, which leaves the fitted values unchanged.
    pub fn new(features: &[f64], n_features: usize, degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(BsviError::invalid(format!(
                "basis degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        if n_features == 0 || !features.len().is_multiple_of(n_features) {
            return Err(BsviError::invalid("feature array does not split into paths"));
        }
        let n_paths = features.len() / n_features;
        let mut columns = Vec::new();
        for f in 0..n_features {
            let col: Vec<f64> = (0..n_paths).map(|p| features[p * n_features + f]).collect();
            let mean = col.iter().sum::<f64>() / n_paths as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_paths as f64;
            if var > 0.0 {
                let sd = var.sqrt();
                columns.push(col.iter().map(|v| (v - mean) / sd).collect::<Vec<f64>>());
            }
        }
        let exponents = monomial_exponents(columns.len(), degree);
        let full_size = monomial_exponents(n_features, degree).len();
        if n_paths <= 10 * full_size {
            return Err(BsviError::invalid(format!(
                "{n_paths} paths is too few for a basis of size {full_size} (need more than {})",
                10 * full_size
            )));
        }
        let design = DMatrix::from_fn(n_paths, exponents.len(), |p, b| {
            exponents[b]
                .iter()
                .zip(&columns)
                .map(|(e, col)| col[p].powi(*e as i32))
                .product()
        });
        let mut normal = design.transpose() * &design;
        let mean_diag: f64 = normal.diagonal().mean();
        let ridge = RIDGE_FLOOR * mean_diag.max(1.0);
        for i in 0..normal.nrows() {
            normal[(i, i)] += ridge;
        }
        let factor = normal.cholesky().ok_or_else(|| BsviError::NumericFailure {
            message: "regression normal equations are rank deficient after ridge".into(),
            residual: f64::NAN,
        })?;
        Ok(Self {
            n_paths,
            design,
            factor,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.design.ncols()
    }

    /// Fitted values of each of the `comps` components of `values`
    /// (path-major).
    pub fn project(&self, values: &[f64], comps: usize) -> Result<Vec<f64>> {
        if values.len() != self.n_paths * comps {
            return Err(BsviError::dim_mismatch("regression values", self.n_paths * comps, values.len()));
        }
        let mut out = vec![0.0; values.len()];
        for c in 0..comps {
            let target = DVector::from_fn(self.n_paths, |p, _| values[p * comps + c]);
            let coef = self.factor.solve(&(self.design.transpose() * target));
            let fitted = &self.design * coef;
            for p in 0..self.n_paths {
                out[p * comps + c] = fitted[p];
            }
        }
        Ok(out)
    }
}

/// Regression features at step `k`: the state `X_k`, plus the Brownian
/// state `B_k` when requested.
pub(crate) fn step_features(ensemble: &PathEnsemble, k: usize, include_brownian: bool) -> (Vec<f64>, usize) {
    let n = ensemble.state_dim;
    let m = ensemble.noise_dim;
    let width = n + if include_brownian { m } else { 0 };
    let mut out = Vec::with_capacity(ensemble.n_paths * width);
    for p in 0..ensemble.n_paths {
        out.extend_from_slice(ensemble.state(p, k));
        if include_brownian {
            out.extend(ensemble.brownian(p, k));
        }
    }
    (out, width)
}

/// Per-path estimate of `E[V | F_{t_k}]` by least squares on polynomials of
/// `X_k` (and `B_k` when `include_brownian`). `values` is path-major with
/// `comps` components per path.
pub fn regression_cond_expect(
    ensemble: &PathEnsemble,
    values: &[f64],
    comps: usize,
    k: usize,
    degree: usize,
    include_brownian: bool,
) -> Result<Vec<f64>> {
    if k > ensemble.grid.n_steps() {
        return Err(BsviError::invalid(format!("step {k} is past the grid")));
    }
    let (features, width) = step_features(ensemble, k, include_brownian);
    Regressor::new(&features, width, degree)?.project(values, comps)
}
