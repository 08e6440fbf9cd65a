use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::ExtReal;
use crate::error::{BsviError, Result};

type ValueFn = dyn Fn(&[f64]) -> ExtReal + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type HessFn = dyn Fn(&[f64], &mut DMatrix<f64>) + Send + Sync;

const PROX_TOL: f64 = 1e-10;
const PROX_MAX_ITER: usize = 100;

/// A user-supplied convex function: value, gradient and Hessian on an
/// optional box domain (`+∞` outside). Its prox has no closed form and is
/// computed by projected Newton.
#[derive(Clone)]
pub struct CustomConvex {
    name: String,
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
    hessian: Arc<HessFn>,
    domain: Option<(Vec<f64>, Vec<f64>)>,
}

impl fmt::Debug for CustomConvex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomConvex")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .finish()
    }
}

impl CustomConvex {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        hessian: impl Fn(&[f64], &mut DMatrix<f64>) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(move |x| ExtReal::Finite(value(x))),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
            domain: None,
        }
    }

    /// Restricts the domain to a box; the function is `+∞` outside.
    pub fn with_box_domain(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != self.dim || upper.len() != self.dim {
            return Err(BsviError::dim_mismatch("custom domain box", self.dim, lower.len()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(BsviError::invalid("custom domain box requires lower <= upper"));
        }
        let inner = self.value.clone();
        let (lo, hi) = (lower.clone(), upper.clone());
        self.value = Arc::new(move |x: &[f64]| {
            let inside = x
                .iter()
                .zip(lo.iter().zip(&hi))
                .all(|(v, (l, u))| l <= v && v <= u);
            if inside {
                inner(x)
            } else {
                ExtReal::PosInfinity
            }
        });
        self.domain = Some((lower, upper));
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Option<(&[f64], &[f64])> {
        self.domain.as_ref().map(|(l, u)| (l.as_slice(), u.as_slice()))
    }

    pub fn value(&self, x: &[f64]) -> ExtReal {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        if !self.value(x).is_finite() {
            return None;
        }
        let mut g = vec![0.0; self.dim];
        (self.gradient)(x, &mut g);
        Some(g)
    }

    pub(crate) fn ptr_eq(&self, other: &CustomConvex) -> bool {
        Arc::ptr_eq(&self.value, &other.value)
    }

    fn project(&self, z: &mut [f64]) {
        if let Some((lo, hi)) = &self.domain {
            for (v, (l, u)) in z.iter_mut().zip(lo.iter().zip(hi)) {
                *v = v.max(*l).min(*u);
            }
        }
    }

    fn objective(&self, z: &[f64], x: &[f64], eps: f64) -> f64 {
        let d2: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 / (2.0 * eps) + self.value(z).to_f64()
    }

    /// Projected Newton on `q(z) = |z − x|²/(2ε) + f(z)`. Bound-active
    /// coordinates whose gradient pushes outward are held fixed; the reduced
    /// Newton step on the free set is followed by projection and Armijo
    /// backtracking. Convergence is measured by the projected-gradient
    /// residual `|z − P(z − ∇q(z))|`.
    pub(crate) fn prox_into(&self, x: &[f64], eps: f64, out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        let mut z = x.to_vec();
        self.project(&mut z);
        let mut grad = vec![0.0; d];
        let mut hess = DMatrix::zeros(d, d);
        let mut residual = f64::INFINITY;
        for _ in 0..PROX_MAX_ITER {
            (self.gradient)(&z, &mut grad);
            for i in 0..d {
                grad[i] += (z[i] - x[i]) / eps;
            }
            let mut probe: Vec<f64> = z.iter().zip(&grad).map(|(a, g)| a - g).collect();
            self.project(&mut probe);
            residual = z
                .iter()
                .zip(&probe)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if residual <= PROX_TOL {
                out.copy_from_slice(&z);
                return Ok(());
            }

            let free: Vec<usize> = (0..d)
                .filter(|&i| match &self.domain {
                    None => true,
                    Some((lo, hi)) => {
                        !((z[i] <= lo[i] && grad[i] > 0.0) || (z[i] >= hi[i] && grad[i] < 0.0))
                    }
                })
                .collect();
            let mut step = vec![0.0; d];
            if !free.is_empty() {
                hess.fill(0.0);
                (self.hessian)(&z, &mut hess);
                let m = free.len();
                let mut reduced = DMatrix::zeros(m, m);
                let mut rhs = DVector::zeros(m);
                for (a, &i) in free.iter().enumerate() {
                    rhs[a] = -grad[i];
                    for (b, &j) in free.iter().enumerate() {
                        reduced[(a, b)] = hess[(i, j)] + if i == j { 1.0 / eps } else { 0.0 };
                    }
                }
                let dir = reduced
                    .cholesky()
                    .map(|c| c.solve(&rhs))
                    .unwrap_or_else(|| rhs * eps);
                for (a, &i) in free.iter().enumerate() {
                    step[i] = dir[a];
                }
            }

            let q0 = self.objective(&z, x, eps);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial: Vec<f64> = z.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                self.project(&mut trial);
                let decrease: f64 = grad
                    .iter()
                    .zip(trial.iter().zip(&z))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum();
                if self.objective(&trial, x, eps) <= q0 + 1e-4 * decrease {
                    z = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // fall back to a projected gradient step of length ε
                let mut trial: Vec<f64> = z.iter().zip(&grad).map(|(a, g)| a - eps * g).collect();
                self.project(&mut trial);
                z = trial;
            }
        }
        Err(BsviError::NumericFailure {
            message: format!(
                "prox of custom function `{}` did not converge in {PROX_MAX_ITER} iterations",
                self.name
            ),
            residual,
        })
    }
}
