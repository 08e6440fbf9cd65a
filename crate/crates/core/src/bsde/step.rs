use nalgebra::{DMatrix, DVector};

use crate::bsde::problem::Driver;
use crate::convex::{norm, ConvexSpec};
use crate::error::{BsviError, Result};
use crate::field::ObliqueField;

/// Iteration cap of the per-node fixed point.
pub const MAX_ITERATIONS: usize = 200;
/// Target residual of the one-step equation, relative to `max(1, |E_k[Y_{k+1}]|)`.
pub const RESIDUAL_TOL: f64 = 1e-10;

const NEWTON_MAX: usize = 500;
const NEWTON_TOL: f64 = 1e-14;

/// Where the oblique matrix used at a node comes from.
#[derive(Clone, Copy)]
pub(crate) enum FieldSource<'a> {
    /// `H(t, Y)` evaluated at the current iterate.
    Live(&'a ObliqueField),
    /// A matrix frozen ahead of the sweep, row-major `d × d`.
    Frozen(&'a [f64]),
}

impl FieldSource<'_> {
    fn matrix(&self, t: f64, y: &[f64]) -> DMatrix<f64> {
        match self {
            FieldSource::Live(f) => f.matrix(t, y),
            FieldSource::Frozen(m) => {
                let d = y.len();
                DMatrix::from_row_slice(d, d, m)
            }
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            FieldSource::Live(f) => f.is_time_only(),
            FieldSource::Frozen(_) => true,
        }
    }
}

/// Data shared by every node of a backward sweep.
#[derive(Clone, Copy)]
pub(crate) struct StepContext<'a> {
    pub convex: &'a ConvexSpec,
    pub driver: &'a Driver,
    pub epsilon: f64,
    pub dt: f64,
    pub field_bound: f64,
}

/// Outcome of one node solve.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSolution {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `Y + dt·H(t, Y)∇φ_ε(Y) − dt·F(t, x, Y, z) = cond_mean` at one node.
///
/// `H` and the non-linear part of `F` are frozen at the current iterate and
/// the frozen problem is solved exactly (scalar `H`) or by Newton (matrix
/// `H`). A driver affine in `y` is handled implicitly. The iteration switches
/// to damping ½ as soon as the residual stops contracting.
pub(crate) fn solve_node(
    ctx: &StepContext<'_>,
    field: FieldSource<'_>,
    t: f64,
    x: &[f64],
    cond_mean: &[f64],
    z: &[f64],
) -> Result<NodeSolution> {
    let d = cond_mean.len();
    let dt = ctx.dt;
    let alpha = ctx.driver.linear_y();
    let zeros = vec![0.0; d];
    let mut y = cond_mean.to_vec();
    let mut f = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let tol = RESIDUAL_TOL * norm(cond_mean).max(1.0);
    let mut history = Vec::new();
    let mut damping = false;
    let mut previous = f64::INFINITY;

    let (rest, denom) = match alpha {
        Some(a) => {
            let denom = 1.0 - dt * a;
            if !(denom > 0.0) {
                return Err(BsviError::SchemeFailure {
                    message: format!(
                        "implicit driver step is singular: 1 - dt*{a} = {denom}; reduce dt"
                    ),
                    location: None,
                    history,
                });
            }
            let mut r = vec![0.0; d];
            ctx.driver.eval(t, x, &zeros, z, &mut r);
            (r, denom)
        }
        None => (Vec::new(), 1.0),
    };

    for iteration in 1..=MAX_ITERATIONS {
        let h = field.matrix(t, &y);
        let (rhs, step): (Vec<f64>, f64) = if alpha.is_some() {
            (
                cond_mean
                    .iter()
                    .zip(&rest)
                    .map(|(m, r)| (m + dt * r) / denom)
                    .collect(),
                dt / denom,
            )
        } else {
            ctx.driver.eval(t, x, &y, z, &mut f);
            (cond_mean.iter().zip(&f).map(|(m, v)| m + dt * v).collect(), dt)
        };
        let mut next = resolve_frozen(ctx.convex, ctx.epsilon, &h, step, &rhs)?;
        if damping {
            next.iter_mut().zip(&y).for_each(|(n, old)| *n = 0.5 * (*n + old));
        }
        y = next;

        ctx.convex.moreau_gradient_into(&y, ctx.epsilon, &mut grad)?;
        let residual = one_step_residual(ctx, field, t, x, cond_mean, z, &y, &grad);
        history.push(residual);
        // with a constant H and an affine driver the frozen solve is the exact answer
        if residual <= tol || (field.is_constant() && alpha.is_some()) {
            return Ok(NodeSolution {
                y,
                u: grad,
                iterations: iteration,
                residual,
            });
        }
        if !residual.is_finite() {
            break;
        }
        if residual >= previous {
            damping = true;
        }
        previous = residual;
    }
    Err(BsviError::SchemeFailure {
        message: format!(
            "per-node fixed point did not reach residual {tol:e} in {MAX_ITERATIONS} iterations \
             (dt = {dt}, epsilon = {}); try dt <= epsilon/(2b) = {}",
            ctx.epsilon,
            ctx.epsilon / (2.0 * ctx.field_bound)
        ),
        location: None,
        history,
    })
}

/// `|Y + dt·H(t,Y)U − dt·F(t,x,Y,z) − cond_mean|` with `U = ∇φ_ε(Y)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn one_step_residual(
    ctx: &StepContext<'_>,
    field: FieldSource<'_>,
    t: f64,
    x: &[f64],
    cond_mean: &[f64],
    z: &[f64],
    y: &[f64],
    u: &[f64],
) -> f64 {
    let d = y.len();
    let h = field.matrix(t, y);
    let mut f = vec![0.0; d];
    ctx.driver.eval(t, x, y, z, &mut f);
    let mut acc = 0.0;
    for i in 0..d {
        let hu: f64 = (0..d).map(|j| h[(i, j)] * u[j]).sum();
        let r = y[i] + ctx.dt * hu - ctx.dt * f[i] - cond_mean[i];
        acc += r * r;
    }
    acc.sqrt()
}

/// Solves `y + step·H∇φ_ε(y) = rhs` for a fixed symmetric positive definite `H`.
pub(crate) fn resolve_frozen(
    convex: &ConvexSpec,
    eps: f64,
    h: &DMatrix<f64>,
    step: f64,
    rhs: &[f64],
) -> Result<Vec<f64>> {
    if convex.is_zero() && convex.normalization().is_none() {
        return Ok(rhs.to_vec());
    }
    if let Some(c) = scalar_multiple(h) {
        return scalar_resolve(convex, eps, step * c, rhs);
    }
    newton_resolve(convex, eps, h, step, rhs)
}

fn scalar_multiple(h: &DMatrix<f64>) -> Option<f64> {
    let c = h[(0, 0)];
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            let expected = if i == j { c } else { 0.0 };
            if h[(i, j)] != expected {
                return None;
            }
        }
    }
    Some(c)
}

/// `(I + μ∇φ_ε)⁻¹(r) = r + μ/(μ + ε)·(J_{μ+ε}(r) − r)`.
fn scalar_resolve(convex: &ConvexSpec, eps: f64, mu: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let mut j = vec![0.0; rhs.len()];
    convex.prox_into(rhs, mu + eps, &mut j)?;
    let w = mu / (mu + eps);
    Ok(rhs.iter().zip(&j).map(|(r, p)| r + w * (p - r)).collect())
}

/// Minimizes the strongly convex `½⟨H⁻¹(y − r), y − r⟩ + λφ_ε(y)`, whose
/// stationarity condition is `y + λH∇φ_ε(y) = r`. Newton steps use a
/// finite-difference generalized Jacobian of `∇φ_ε` with Armijo
/// backtracking; a gradient step with step `1/L` is the fallback.
fn newton_resolve(
    convex: &ConvexSpec,
    eps: f64,
    h: &DMatrix<f64>,
    lambda: f64,
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let d = rhs.len();
    let h_inv = h
        .clone()
        .cholesky()
        .ok_or_else(|| BsviError::NumericFailure {
            message: "oblique matrix is not positive definite".into(),
            residual: f64::NAN,
        })?
        .inverse();
    let lipschitz = h_inv.norm() + lambda / eps;
    let r = DVector::from_column_slice(rhs);
    let scale = r.norm().max(1.0);

    let objective = |y: &DVector<f64>| -> Result<f64> {
        let diff = y - &r;
        let m = convex.moreau(eps, y.as_slice())?;
        Ok(0.5 * diff.dot(&(&h_inv * &diff)) + lambda * m.value)
    };
    let gradient = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let mut g = vec![0.0; d];
        convex.moreau_gradient_into(y.as_slice(), eps, &mut g)?;
        Ok(&h_inv * (y - &r) + DVector::from_vec(g) * lambda)
    };

    let mut y = r.clone();
    let mut g = gradient(&y)?;
    for _ in 0..NEWTON_MAX {
        if (h * &g).norm() <= NEWTON_TOL * scale {
            break;
        }
        let jac = gradient_jacobian(convex, eps, y.as_slice())?;
        let m = &h_inv + jac * lambda;
        let direction = m
            .cholesky()
            .map(|c| -c.solve(&g))
            .filter(|p| p.dot(&g) < 0.0)
            .unwrap_or_else(|| -&g / lipschitz);
        let f0 = objective(&y)?;
        let slope = g.dot(&direction);
        let mut s = 1.0;
        let mut accepted = None;
        while s > 1e-12 {
            let trial = &y + &direction * s;
            if objective(&trial)? <= f0 + 1e-4 * s * slope {
                accepted = Some(trial);
                break;
            }
            s *= 0.5;
        }
        y = accepted.unwrap_or_else(|| &y - &g / lipschitz);
        g = gradient(&y)?;
    }
    Ok(y.as_slice().to_vec())
}

fn gradient_jacobian(convex: &ConvexSpec, eps: f64, y: &[f64]) -> Result<DMatrix<f64>> {
    let d = y.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    let mut probe = y.to_vec();
    for c in 0..d {
        let step = 1e-7 * y[c].abs().max(1.0);
        probe[c] = y[c] + step;
        convex.moreau_gradient_into(&probe, eps, &mut plus)?;
        probe[c] = y[c] - step;
        convex.moreau_gradient_into(&probe, eps, &mut minus)?;
        probe[c] = y[c];
        for i in 0..d {
            jac[(i, c)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok((&jac + jac.transpose()) * 0.5)
}
