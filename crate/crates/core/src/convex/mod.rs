//! Proper l.s.c. convex functions, their proximal maps, and Moreau–Yosida
//! regularization.
//!
//! For `f` convex and `ε > 0`:
//!
//! ```text
//! f_ε(x)  = min_z |z − x|²/(2ε) + f(z)
//! J_ε x   = argmin of the above            (the resolvent / prox)
//! ∇f_ε(x) = (x − J_ε x)/ε
//! ```
//!
//! Every built-in has a closed-form prox. Custom functions go through a
//! projected Newton solver on the (strongly convex) prox objective.

mod custom;
mod yosida;

use std::fmt;

use nalgebra::{DMatrix, DVector};

pub use custom::CustomConvex;
pub use yosida::{check_yosida, PropertyCheck, YosidaReport};

use crate::error::{BsviError, Result};

/// Extended real value: finite or `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    PosInfinity,
}

impl ExtReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PosInfinity => None,
        }
    }

    /// `+∞` maps to `f64::INFINITY`; for reporting only.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
            (ExtReal::Finite(_), ExtReal::PosInfinity) => Some(Less),
            (ExtReal::PosInfinity, ExtReal::Finite(_)) => Some(Greater),
            (ExtReal::PosInfinity, ExtReal::PosInfinity) => Some(Equal),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInfinity => write!(f, "+inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorTag {
    Zero,
    IndicatorHalfspace,
    IndicatorBox,
    IndicatorBall,
    Quadratic,
    L1Norm,
    Custom,
}

#[derive(Clone)]
pub enum ConvexKind {
    /// f ≡ 0.
    Zero,
    /// Indicator of `{x : ⟨normal, x⟩ ≤ offset}`.
    IndicatorHalfspace { normal: Vec<f64>, offset: f64 },
    /// Indicator of the box `lower ≤ x ≤ upper` (bounds may be infinite).
    IndicatorBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Indicator of the closed ball `|x − center| ≤ radius`.
    IndicatorBall { center: Vec<f64>, radius: f64 },
    /// `½⟨Qx, x⟩` with `Q` symmetric positive semidefinite.
    Quadratic { matrix: DMatrix<f64> },
    /// `weight · Σ|x_i|`.
    L1 { weight: f64 },
    Custom(CustomConvex),
}

impl fmt::Debug for ConvexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvexKind::Zero => write!(f, "Zero"),
            ConvexKind::IndicatorHalfspace { normal, offset } => f
                .debug_struct("IndicatorHalfspace")
                .field("normal", normal)
                .field("offset", offset)
                .finish(),
            ConvexKind::IndicatorBox { lower, upper } => f
                .debug_struct("IndicatorBox")
                .field("lower", lower)
                .field("upper", upper)
                .finish(),
            ConvexKind::IndicatorBall { center, radius } => f
                .debug_struct("IndicatorBall")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            ConvexKind::Quadratic { matrix } => f
                .debug_struct("Quadratic")
                .field("matrix", &matrix.as_slice())
                .finish(),
            ConvexKind::L1 { weight } => f.debug_struct("L1").field("weight", weight).finish(),
            ConvexKind::Custom(c) => write!(f, "Custom({})", c.name()),
        }
    }
}

/// Shift `f̃(y) = f(y + base) − f(base) − ⟨slope, y⟩` for a pair
/// `(base, slope)` in the graph of ∂f; makes `f̃(0) = 0 ≤ f̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub base: Vec<f64>,
    pub slope: Vec<f64>,
    pub base_value: f64,
}

/// A proper lower semicontinuous convex function on `R^d`.
#[derive(Clone, Debug)]
pub struct ConvexSpec {
    dim: usize,
    kind: ConvexKind,
    normalization: Option<Normalization>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoreauResult {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub resolvent: Vec<f64>,
    pub epsilon: f64,
}

impl ConvexSpec {
    pub fn new(dim: usize, kind: ConvexKind) -> Result<Self> {
        if dim == 0 {
            return Err(BsviError::invalid("convex function dimension must be positive"));
        }
        match &kind {
            ConvexKind::Zero => {}
            ConvexKind::IndicatorHalfspace { normal, offset } => {
                check_len("half-space normal", normal, dim)?;
                if normal.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                    return Err(BsviError::invalid("half-space normal must be nonzero"));
                }
                if !offset.is_finite() {
                    return Err(BsviError::invalid("half-space offset must be finite"));
                }
            }
            ConvexKind::IndicatorBox { lower, upper } => {
                check_len("box lower bound", lower, dim)?;
                check_len("box upper bound", upper, dim)?;
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(BsviError::invalid("box requires lower <= upper on every axis"));
                }
            }
            ConvexKind::IndicatorBall { center, radius } => {
                check_len("ball center", center, dim)?;
                if !(*radius >= 0.0) || !radius.is_finite() {
                    return Err(BsviError::invalid("ball radius must be finite and >= 0"));
                }
            }
            ConvexKind::Quadratic { matrix } => {
                if matrix.nrows() != dim || matrix.ncols() != dim {
                    return Err(BsviError::dim_mismatch("quadratic matrix", dim, matrix.nrows()));
                }
                let asym = (matrix - matrix.transpose()).abs().max();
                if asym > 1e-12 {
                    return Err(BsviError::invalid(format!(
                        "quadratic matrix is not symmetric (max asymmetry {asym:e})"
                    )));
                }
                let min_eig = matrix.clone().symmetric_eigen().eigenvalues.min();
                if min_eig < -1e-12 {
                    return Err(BsviError::invalid(format!(
                        "quadratic matrix is not positive semidefinite (min eigenvalue {min_eig:e})"
                    )));
                }
            }
            ConvexKind::L1 { weight } => {
                if !(*weight >= 0.0) {
                    return Err(BsviError::invalid("l1 weight must be >= 0"));
                }
            }
            ConvexKind::Custom(c) => {
                if c.dim() != dim {
                    return Err(BsviError::dim_mismatch("custom convex function", dim, c.dim()));
                }
            }
        }
        Ok(Self {
            dim,
            kind,
            normalization: None,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, ConvexKind::Zero).expect("dim > 0")
    }

    /// Indicator of `[0, ∞)` in one dimension.
    pub fn nonneg_half_line() -> Self {
        Self::new(
            1,
            ConvexKind::IndicatorHalfspace {
                normal: vec![-1.0],
                offset: 0.0,
            },
        )
        .expect("valid half-line")
    }

    /// `½|x|²`.
    pub fn half_squared_norm(dim: usize) -> Self {
        Self::new(
            dim,
            ConvexKind::Quadratic {
                matrix: DMatrix::identity(dim, dim),
            },
        )
        .expect("identity is psd")
    }

    pub fn l1(dim: usize) -> Self {
        Self::new(dim, ConvexKind::L1 { weight: 1.0 }).expect("weight 1")
    }

    /// Applies the normalization shift around `(base, slope) ∈ ∂f`.
    /// Fails when `slope ∉ ∂f(base)` for built-ins.
    pub fn normalized(mut self, base: Vec<f64>, slope: Vec<f64>) -> Result<Self> {
        if self.normalization.is_some() {
            return Err(BsviError::invalid("convex function is already normalized"));
        }
        check_len("normalization base", &base, self.dim)?;
        check_len("normalization slope", &slope, self.dim)?;
        let base_value = self.raw_eval(&base).finite().ok_or_else(|| {
            BsviError::invalid("normalization base point lies outside dom f")
        })?;
        if let Some(false) = self.raw_subdifferential_contains(&base, &slope, 1e-9) {
            return Err(BsviError::invalid(
                "normalization slope is not a subgradient at the base point",
            ));
        }
        self.normalization = Some(Normalization {
            base,
            slope,
            base_value,
        });
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ConvexKind {
        &self.kind
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn tag(&self) -> DescriptorTag {
        match self.kind {
            ConvexKind::Zero => DescriptorTag::Zero,
            ConvexKind::IndicatorHalfspace { .. } => DescriptorTag::IndicatorHalfspace,
            ConvexKind::IndicatorBox { .. } => DescriptorTag::IndicatorBox,
            ConvexKind::IndicatorBall { .. } => DescriptorTag::IndicatorBall,
            ConvexKind::Quadratic { .. } => DescriptorTag::Quadratic,
            ConvexKind::L1 { .. } => DescriptorTag::L1Norm,
            ConvexKind::Custom(_) => DescriptorTag::Custom,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, ConvexKind::Zero)
    }

    pub fn is_indicator(&self) -> bool {
        matches!(
            self.kind,
            ConvexKind::IndicatorHalfspace { .. }
                | ConvexKind::IndicatorBox { .. }
                | ConvexKind::IndicatorBall { .. }
        )
    }

    /// `Some(q)` when the function is `½ q |x|²` (unshifted), the case with a
    /// scalar closed-form resolvent `x/(1 + εq)`.
    pub fn isotropic_quadratic_coefficient(&self) -> Option<f64> {
        if self.normalization.is_some() {
            return None;
        }
        match &self.kind {
            ConvexKind::Zero => Some(0.0),
            ConvexKind::Quadratic { matrix } => {
                let q = matrix[(0, 0)];
                let scalar = DMatrix::identity(self.dim, self.dim) * q;
                ((matrix - scalar).abs().max() == 0.0).then_some(q)
            }
            _ => None,
        }
    }

    /// `false` for indicators of sets with empty interior (degenerate box,
    /// zero-radius ball). Such functions are accepted but flagged.
    pub fn has_nonempty_interior(&self) -> bool {
        match &self.kind {
            ConvexKind::IndicatorBox { lower, upper } => {
                lower.iter().zip(upper).all(|(l, u)| l < u)
            }
            ConvexKind::IndicatorBall { radius, .. } => *radius > 0.0,
            ConvexKind::Custom(c) => c
                .domain()
                .map(|(l, u)| l.iter().zip(u).all(|(a, b)| a < b))
                .unwrap_or(true),
            _ => true,
        }
    }

    /// `f(0) = 0` and `0 ∈ ∂f(0)`, hence `f ≥ f(0) = 0`.
    pub fn is_normalized(&self) -> bool {
        let origin = vec![0.0; self.dim];
        let at_zero = self.eval_unchecked(&origin);
        at_zero == ExtReal::Finite(0.0)
            && self
                .subdifferential_contains(&origin, &origin, 1e-12)
                .unwrap_or(false)
    }

    pub fn eval(&self, x: &[f64]) -> Result<ExtReal> {
        check_len("convex eval point", x, self.dim)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> ExtReal {
        match &self.normalization {
            None => self.raw_eval(x),
            Some(n) => {
                let shifted: Vec<f64> = x.iter().zip(&n.base).map(|(a, b)| a + b).collect();
                match self.raw_eval(&shifted) {
                    ExtReal::Finite(v) => ExtReal::Finite(v - n.base_value - dot(&n.slope, x)),
                    ExtReal::PosInfinity => ExtReal::PosInfinity,
                }
            }
        }
    }

    fn raw_eval(&self, x: &[f64]) -> ExtReal {
        let indicator = |inside: bool| {
            if inside {
                ExtReal::Finite(0.0)
            } else {
                ExtReal::PosInfinity
            }
        };
        match &self.kind {
            ConvexKind::Zero => ExtReal::Finite(0.0),
            ConvexKind::IndicatorHalfspace { normal, offset } => {
                indicator(dot(normal, x) <= *offset)
            }
            ConvexKind::IndicatorBox { lower, upper } => indicator(
                x.iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(v, (l, u))| *l <= *v && *v <= *u),
            ),
            ConvexKind::IndicatorBall { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                indicator(r2 <= radius * radius)
            }
            ConvexKind::Quadratic { matrix } => {
                let v = DVector::from_column_slice(x);
                ExtReal::Finite(0.5 * v.dot(&(matrix * &v)))
            }
            ConvexKind::L1 { weight } => ExtReal::Finite(weight * x.iter().map(|v| v.abs()).sum::<f64>()),
            ConvexKind::Custom(c) => c.value(x),
        }
    }

    /// Unique minimizer of `z ↦ |z − x|²/(2ε) + f(z)`.
    pub fn prox(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        check_len("prox point", x, self.dim)?;
        check_eps(eps)?;
        let mut out = vec![0.0; self.dim];
        self.prox_into(x, eps, &mut out)?;
        Ok(out)
    }

    pub(crate) fn prox_into(&self, x: &[f64], eps: f64, out: &mut [f64]) -> Result<()> {
        match &self.normalization {
            None => self.raw_prox_into(x, eps, out),
            Some(n) => {
                // prox_f̃(x) = prox_f(x + base + ε·slope) − base
                let moved: Vec<f64> = x
                    .iter()
                    .zip(n.base.iter().zip(&n.slope))
                    .map(|(v, (b, s))| v + b + eps * s)
                    .collect();
                self.raw_prox_into(&moved, eps, out)?;
                out.iter_mut().zip(&n.base).for_each(|(o, b)| *o -= b);
                Ok(())
            }
        }
    }

    fn raw_prox_into(&self, x: &[f64], eps: f64, out: &mut [f64]) -> Result<()> {
        match &self.kind {
            ConvexKind::Zero => out.copy_from_slice(x),
            ConvexKind::IndicatorHalfspace { normal, offset } => {
                let excess = dot(normal, x) - offset;
                out.copy_from_slice(x);
                if excess > 0.0 {
                    let nn = dot(normal, normal);
                    for (o, n) in out.iter_mut().zip(normal) {
                        *o -= excess / nn * n;
                    }
                }
            }
            ConvexKind::IndicatorBox { lower, upper } => {
                for ((o, v), (l, u)) in out.iter_mut().zip(x).zip(lower.iter().zip(upper)) {
                    *o = v.max(*l).min(*u);
                }
            }
            ConvexKind::IndicatorBall { center, radius } => {
                let dist = x
                    .iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                if dist <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let scale = radius / dist;
                    for ((o, v), c) in out.iter_mut().zip(x).zip(center) {
                        *o = c + (v - c) * scale;
                    }
                }
            }
            ConvexKind::Quadratic { matrix } => {
                if self.dim == 1 {
                    out[0] = x[0] / (1.0 + eps * matrix[(0, 0)]);
                } else {
                    let system = DMatrix::identity(self.dim, self.dim) + matrix * eps;
                    let rhs = DVector::from_column_slice(x);
                    let sol = system
                        .cholesky()
                        .ok_or_else(|| BsviError::NumericFailure {
                            message: "I + εQ is not positive definite".into(),
                            residual: f64::NAN,
                        })?
                        .solve(&rhs);
                    out.copy_from_slice(sol.as_slice());
                }
            }
            ConvexKind::L1 { weight } => {
                let thr = eps * weight;
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.signum() * (v.abs() - thr).max(0.0);
                }
            }
            ConvexKind::Custom(c) => c.prox_into(x, eps, out)?,
        }
        Ok(())
    }

    /// `(f_ε(x), ∇f_ε(x), J_ε x)`.
    pub fn moreau(&self, eps: f64, x: &[f64]) -> Result<MoreauResult> {
        check_len("moreau point", x, self.dim)?;
        check_eps(eps)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BsviError::invalid("moreau point must be finite"));
        }
        let mut resolvent = vec![0.0; self.dim];
        self.prox_into(x, eps, &mut resolvent)?;
        let gradient: Vec<f64> = x
            .iter()
            .zip(&resolvent)
            .map(|(a, j)| (a - j) / eps)
            .collect();
        let dist2: f64 = x.iter().zip(&resolvent).map(|(a, j)| (a - j) * (a - j)).sum();
        let at_resolvent = self.value_at_resolvent(&resolvent);
        Ok(MoreauResult {
            value: dist2 / (2.0 * eps) + at_resolvent,
            gradient,
            resolvent,
            epsilon: eps,
        })
    }

    /// `∇f_ε(x)` written into `out`; the hot path of the backward solvers.
    pub(crate) fn moreau_gradient_into(&self, x: &[f64], eps: f64, out: &mut [f64]) -> Result<()> {
        if self.is_zero() && self.normalization.is_none() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return Ok(());
        }
        self.prox_into(x, eps, out)?;
        for (o, v) in out.iter_mut().zip(x) {
            *o = (v - *o) / eps;
        }
        Ok(())
    }

    /// `f` at a resolvent point. Resolvents of indicators land in the set by
    /// construction; evaluating them exactly would turn projection round-off
    /// into `+∞`.
    fn value_at_resolvent(&self, j: &[f64]) -> f64 {
        if self.is_indicator() {
            return match &self.normalization {
                None => 0.0,
                Some(n) => -n.base_value - dot(&n.slope, j),
            };
        }
        self.eval_unchecked(j).to_f64()
    }

    /// Membership test `v ∈ ∂f(x)` for functions with a known exact
    /// subdifferential. `None` when the test is unavailable.
    pub fn subdifferential_contains(&self, x: &[f64], v: &[f64], tol: f64) -> Option<bool> {
        match &self.normalization {
            None => self.raw_subdifferential_contains(x, v, tol),
            Some(n) => {
                let xs: Vec<f64> = x.iter().zip(&n.base).map(|(a, b)| a + b).collect();
                let vs: Vec<f64> = v.iter().zip(&n.slope).map(|(a, s)| a + s).collect();
                self.raw_subdifferential_contains(&xs, &vs, tol)
            }
        }
    }

    fn raw_subdifferential_contains(&self, x: &[f64], v: &[f64], tol: f64) -> Option<bool> {
        let vnorm = norm(v);
        let small = |w: f64| w.abs() <= tol * (1.0 + vnorm);
        match &self.kind {
            ConvexKind::Zero => Some(v.iter().all(|w| small(*w))),
            ConvexKind::IndicatorHalfspace { normal, offset } => {
                let slack = dot(normal, x) - offset;
                let scale = tol * (1.0 + norm(x)) * norm(normal);
                if slack > scale {
                    Some(false)
                } else if slack < -scale {
                    Some(v.iter().all(|w| small(*w)))
                } else {
                    // v = λ·normal, λ ≥ 0
                    let lambda = dot(v, normal) / dot(normal, normal);
                    let resid = v
                        .iter()
                        .zip(normal)
                        .map(|(a, n)| (a - lambda * n).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    Some(lambda >= -tol * (1.0 + vnorm) && small(resid))
                }
            }
            ConvexKind::IndicatorBox { lower, upper } => Some(
                x.iter()
                    .zip(v)
                    .zip(lower.iter().zip(upper))
                    .all(|((xi, vi), (l, u))| {
                        let s = tol * (1.0 + xi.abs());
                        if *xi < l - s || *xi > u + s {
                            return false;
                        }
                        let at_lower = (*xi - l).abs() <= s;
                        let at_upper = (*xi - u).abs() <= s;
                        match (at_lower, at_upper) {
                            (true, true) => true,
                            (true, false) => *vi <= tol * (1.0 + vnorm),
                            (false, true) => *vi >= -tol * (1.0 + vnorm),
                            (false, false) => small(*vi),
                        }
                    }),
            ),
            ConvexKind::IndicatorBall { center, radius } => {
                let rel: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let dist = norm(&rel);
                let s = tol * (1.0 + radius);
                if dist > radius + s {
                    Some(false)
                } else if dist < radius - s {
                    Some(v.iter().all(|w| small(*w)))
                } else if dist == 0.0 {
                    Some(true)
                } else {
                    let lambda = dot(v, &rel) / (dist * dist);
                    let resid = v
                        .iter()
                        .zip(&rel)
                        .map(|(a, r)| (a - lambda * r).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    Some(lambda >= -tol * (1.0 + vnorm) && small(resid))
                }
            }
            ConvexKind::Quadratic { matrix } => {
                let g = matrix * DVector::from_column_slice(x);
                Some(g.iter().zip(v).all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs())))
            }
            ConvexKind::L1 { weight } => Some(x.iter().zip(v).all(|(xi, vi)| {
                if *xi == 0.0 {
                    vi.abs() <= weight + tol * (1.0 + weight)
                } else {
                    (vi - weight * xi.signum()).abs() <= tol * (1.0 + weight)
                }
            })),
            ConvexKind::Custom(c) => {
                let g = c.gradient(x)?;
                Some(g.iter().zip(v).all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs())))
            }
        }
    }

    /// Structural equality used when two solvers must agree on the same
    /// function. Custom functions compare by identity.
    pub fn same_as(&self, other: &ConvexSpec) -> bool {
        if self.dim != other.dim || self.normalization != other.normalization {
            return false;
        }
        match (&self.kind, &other.kind) {
            (ConvexKind::Zero, ConvexKind::Zero) => true,
            (
                ConvexKind::IndicatorHalfspace { normal: a, offset: b },
                ConvexKind::IndicatorHalfspace { normal: c, offset: d },
            ) => a == c && b == d,
            (
                ConvexKind::IndicatorBox { lower: a, upper: b },
                ConvexKind::IndicatorBox { lower: c, upper: d },
            ) => a == c && b == d,
            (
                ConvexKind::IndicatorBall { center: a, radius: b },
                ConvexKind::IndicatorBall { center: c, radius: d },
            ) => a == c && b == d,
            (ConvexKind::Quadratic { matrix: a }, ConvexKind::Quadratic { matrix: b }) => a == b,
            (ConvexKind::L1 { weight: a }, ConvexKind::L1 { weight: b }) => a == b,
            (ConvexKind::Custom(a), ConvexKind::Custom(b)) => a.ptr_eq(b),
            _ => false,
        }
    }
}

fn check_len(what: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(BsviError::dim_mismatch(what, dim, v.len()));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(BsviError::invalid(format!("epsilon must be finite and > 0, got {eps}")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
