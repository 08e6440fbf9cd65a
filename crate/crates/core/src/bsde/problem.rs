use std::fmt;
use std::sync::Arc;

use crate::convex::ConvexSpec;
use crate::error::{BsviError, Result};
use crate::expr::{indexed_lookup, indexed_names, ScalarExpr};
use crate::field::{FieldConstants, ObliqueField};
use crate::forward::{AffineCoefficients, Coefficients, TimeGrid};

type DriverFn = dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
type TerminalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub enum DriverKind {
    Zero,
    /// `F_i = y_coeff·y_i + z_coeff·Σ_c z_{ic} + x_coeff·x_1 + constant_i`.
    Linear {
        y_coeff: f64,
        z_coeff: f64,
        x_coeff: f64,
        constant: Vec<f64>,
    },
    /// `f(t, x, y, z, out)`; `z` is row-major `d × noise_dim`.
    Custom(Arc<DriverFn>),
}

impl fmt::Debug for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriverKind::Zero => write!(f, "Zero"),
            DriverKind::Linear {
                y_coeff,
                z_coeff,
                x_coeff,
                constant,
            } => f
                .debug_struct("Linear")
                .field("y_coeff", y_coeff)
                .field("z_coeff", z_coeff)
                .field("x_coeff", x_coeff)
                .field("constant", constant)
                .finish(),
            DriverKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Generator `F(t, x, y, z)` with its declared constants: `L`
/// (y-Lipschitz), `ℓ` (z-Lipschitz) and an optional bound `ρ` on
/// `|F(t, x, 0, 0)|`.
#[derive(Clone, Debug)]
pub struct Driver {
    kind: DriverKind,
    lipschitz_y: f64,
    lipschitz_z: f64,
    rho: Option<f64>,
}

impl Driver {
    pub fn zero() -> Self {
        Self {
            kind: DriverKind::Zero,
            lipschitz_y: 0.0,
            lipschitz_z: 0.0,
            rho: Some(0.0),
        }
    }

    pub fn linear(y_coeff: f64, z_coeff: f64, x_coeff: f64, constant: Vec<f64>) -> Self {
        let rho = if x_coeff == 0.0 {
            Some(constant.iter().map(|c| c * c).sum::<f64>().sqrt())
        } else {
            None
        };
        Self {
            kind: DriverKind::Linear {
                y_coeff,
                z_coeff,
                x_coeff,
                constant,
            },
            lipschitz_y: y_coeff.abs(),
            lipschitz_z: z_coeff.abs(),
            rho,
        }
    }

    pub fn custom(
        f: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        lipschitz_y: f64,
        lipschitz_z: f64,
    ) -> Self {
        Self {
            kind: DriverKind::Custom(Arc::new(f)),
            lipschitz_y,
            lipschitz_z,
            rho: None,
        }
    }

    pub fn kind(&self) -> &DriverKind {
        &self.kind
    }

    pub fn lipschitz_y(&self) -> f64 {
        self.lipschitz_y
    }

    pub fn lipschitz_z(&self) -> f64 {
        self.lipschitz_z
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, DriverKind::Zero)
    }

    /// True when `F` may depend on `z`.
    pub fn depends_on_z(&self) -> bool {
        match &self.kind {
            DriverKind::Zero => false,
            DriverKind::Linear { z_coeff, .. } => *z_coeff != 0.0,
            DriverKind::Custom(_) => self.lipschitz_z > 0.0,
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.kind {
            DriverKind::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            DriverKind::Linear {
                y_coeff,
                z_coeff,
                x_coeff,
                constant,
            } => {
                let d = y.len();
                let m = z.len() / d.max(1);
                let x1 = x.first().copied().unwrap_or(0.0);
                for i in 0..d {
                    let zsum: f64 = z[i * m..(i + 1) * m].iter().sum();
                    out[i] = y_coeff * y[i] + z_coeff * zsum + x_coeff * x1 + constant[i];
                }
            }
            DriverKind::Custom(f) => f(t, x, y, z, out),
        }
    }

    /// `Some(α)` when `F(t, x, y, z) = α·y + r(t, x, z)`; such drivers are
    /// treated implicitly in `y`.
    pub(crate) fn linear_y(&self) -> Option<f64> {
        match &self.kind {
            DriverKind::Zero => Some(0.0),
            DriverKind::Linear { y_coeff, .. } => Some(*y_coeff),
            DriverKind::Custom(_) => None,
        }
    }

    pub(crate) fn same_as(&self, other: &Driver) -> bool {
        match (&self.kind, &other.kind) {
            (DriverKind::Zero, DriverKind::Zero) => true,
            (
                DriverKind::Linear {
                    y_coeff: a,
                    z_coeff: b,
                    x_coeff: c,
                    constant: d,
                },
                DriverKind::Linear {
                    y_coeff: e,
                    z_coeff: f,
                    x_coeff: g,
                    constant: h,
                },
            ) => a == e && b == f && c == g && d == h,
            (DriverKind::Custom(a), DriverKind::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

/// Terminal condition `η`.
#[derive(Clone)]
pub enum Terminal {
    /// `η = g(X_T)`, one expression per component in `x` / `x1..xn`.
    Expr(Vec<ScalarExpr>),
    /// `η = g(X_T)` from a closure.
    Function(Arc<TerminalFn>),
    /// Raw values on the terminal lattice nodes, node-major.
    NodeValues(Vec<f64>),
}

impl fmt::Debug for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Expr(e) => f.debug_tuple("Expr").field(e).finish(),
            Terminal::Function(_) => write!(f, "Function(..)"),
            Terminal::NodeValues(v) => write!(f, "NodeValues({} values)", v.len()),
        }
    }
}

impl Terminal {
    /// Parses one expression per output component over the state variables
    /// `x` (alias of `x1`) and `x1..x{state_dim}`.
    pub fn expressions(exprs: &[&str], state_dim: usize) -> Result<Self> {
        let names = indexed_names("x", state_dim);
        let mut allowed = vec!["x"];
        allowed.extend(names.iter().map(String::as_str));
        Ok(Terminal::Expr(
            exprs
                .iter()
                .map(|e| ScalarExpr::parse(e, &allowed))
                .collect::<Result<_>>()?,
        ))
    }

    pub fn function(f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Terminal::Function(Arc::new(f))
    }

    /// `g(x)`; fails for [`Terminal::NodeValues`].
    pub fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Terminal::Expr(exprs) => {
                for (o, e) in out.iter_mut().zip(exprs) {
                    *o = e.eval_with(|n| indexed_lookup(n, "x", x).unwrap_or(f64::NAN));
                }
                Ok(())
            }
            Terminal::Function(f) => {
                f(x, out);
                Ok(())
            }
            Terminal::NodeValues(_) => Err(BsviError::invalid(
                "raw node terminal values cannot be evaluated as a map",
            )),
        }
    }

    pub(crate) fn same_as(&self, other: &Terminal) -> bool {
        match (self, other) {
            (Terminal::Expr(a), Terminal::Expr(b)) => a == b,
            (Terminal::Function(a), Terminal::Function(b)) => Arc::ptr_eq(a, b),
            (Terminal::NodeValues(a), Terminal::NodeValues(b)) => a == b,
            _ => false,
        }
    }
}

/// Forward state `X` with `X_{t0} = x0`. On the lattice the coefficients
/// must be constant with one noise dimension, so that
/// `X_t = x0 + b(t − t0) + σ B_t` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardModel {
    pub x0: Vec<f64>,
    pub coeffs: AffineCoefficients,
}

impl ForwardModel {
    /// `X = x0 + B` in one dimension.
    pub fn brownian(x0: f64) -> Self {
        Self {
            x0: vec![x0],
            coeffs: AffineCoefficients::scalar(0.0, 1.0),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    /// `X_t = x0 + B_t` with identity volatility.
    pub fn is_plain_brownian(&self) -> bool {
        let c = &self.coeffs;
        c.is_constant()
            && c.drift_offset.iter().all(|v| *v == 0.0)
            && c.vol_offset.nrows() == c.vol_offset.ncols()
            && c.vol_offset == nalgebra::DMatrix::identity(c.vol_offset.nrows(), c.vol_offset.ncols())
    }

    /// Closed-form state on the lattice: `x0 + b·(t − t0) + σ·B`.
    pub(crate) fn lattice_state(&self, elapsed: f64, brownian: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.x0[i]
                + self.coeffs.drift_offset[i] * elapsed
                + self.coeffs.vol_offset[(i, 0)] * brownian;
        }
    }
}

/// The penalized problem: terminal data, driver, convex function, oblique
/// field, forward model, time grid and penalization parameter `ε`.
#[derive(Clone, Debug)]
pub struct BsviProblem {
    pub grid: TimeGrid,
    pub dim: usize,
    pub terminal: Terminal,
    pub driver: Driver,
    pub convex: ConvexSpec,
    pub field: ObliqueField,
    pub forward: ForwardModel,
    pub epsilon: f64,
}

/// Shift applied by [`BsviProblem::normalize`]; undo it on solutions with
/// [`BackwardSolution::denormalize`](crate::bsde::BackwardSolution::denormalize).
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemShift {
    pub base: Vec<f64>,
    pub slope: Vec<f64>,
}

impl BsviProblem {
    pub fn new(
        grid: TimeGrid,
        terminal: Terminal,
        driver: Driver,
        convex: ConvexSpec,
        field: ObliqueField,
        forward: ForwardModel,
        epsilon: f64,
    ) -> Result<Self> {
        let p = Self {
            grid,
            dim: convex.dim(),
            terminal,
            driver,
            convex,
            field,
            forward,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.field.dim() != self.dim {
            return Err(BsviError::dim_mismatch("oblique field", self.dim, self.field.dim()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(BsviError::invalid(format!(
                "penalization epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        if let DriverKind::Linear { constant, .. } = self.driver.kind() {
            if constant.len() != self.dim {
                return Err(BsviError::dim_mismatch("driver constant", self.dim, constant.len()));
            }
        }
        if let Terminal::Expr(e) = &self.terminal {
            if e.len() != self.dim {
                return Err(BsviError::dim_mismatch("terminal expressions", self.dim, e.len()));
            }
        }
        self.forward.coeffs.validate()?;
        if self.forward.x0.len() != self.forward.coeffs.state_dim() {
            return Err(BsviError::dim_mismatch(
                "forward initial state",
                self.forward.coeffs.state_dim(),
                self.forward.x0.len(),
            ));
        }
        Ok(())
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut p = self.clone();
        p.epsilon = epsilon;
        p.validate()?;
        Ok(p)
    }

    /// Solutions are only claimed to be strong (adapted to the Brownian
    /// filtration, unique) for time-only fields.
    pub fn require_strong_scope(&self) -> Result<()> {
        if !self.field.is_time_only() {
            return Err(BsviError::invalid(
                "this operation requires a time-only oblique field H(t)",
            ));
        }
        Ok(())
    }

    /// Tags describing where the problem sits relative to the hypotheses
    /// under which the penalized scheme is known to converge.
    pub fn scope_notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        let FieldConstants { a, .. } = self.field.constants();
        if self.driver.depends_on_z() && self.driver.lipschitz_z() >= a.sqrt() {
            notes.push(format!(
                "outside strong-existence hypothesis: z-Lipschitz constant {} >= sqrt(a) = {}",
                self.driver.lipschitz_z(),
                a.sqrt()
            ));
        }
        if !self.field.is_time_only() {
            notes.push("state-dependent field H(t,y): weak-solution regime".into());
        }
        if self.field.ellipticity_below_one() {
            notes.push(format!("declared ellipticity a = {a} < 1"));
        }
        if !self.convex.has_nonempty_interior() {
            notes.push("dom(phi) has empty interior".into());
        }
        if !self.convex.is_normalized() {
            notes.push("phi is not normalized (phi(0) = 0 <= phi fails)".into());
        }
        notes.push("exponential-moment condition on the data is not checked".into());
        notes
    }

    /// Moves the problem so that the convex function satisfies
    /// `φ̃(0) = 0 ≤ φ̃`, given `slope ∈ ∂φ(base)`:
    ///
    /// ```text
    /// φ̃(y) = φ(y + base) − φ(base) − ⟨slope, y⟩
    /// F̃(t, x, y, z) = F(t, x, y + base, z) − H(t, y + base)·slope
    /// H̃(t, y) = H(t, y + base),   η̃ = η − base
    /// ```
    ///
    /// The original solution is `(Ỹ + base, Z̃, Ũ + slope)`.
    pub fn normalize(&self, base: Vec<f64>, slope: Vec<f64>) -> Result<(Self, ProblemShift)> {
        let d = self.dim;
        let convex = self.convex.clone().normalized(base.clone(), slope.clone())?;

        let field = self.field.clone();
        let shifted_field = {
            let f = field.clone();
            let b = base.clone();
            ObliqueField::custom(
                d,
                move |t, y| {
                    let ys: Vec<f64> = y.iter().zip(&b).map(|(v, s)| v + s).collect();
                    f.matrix(t, &ys)
                },
                field.constants(),
                field.is_time_only(),
            )?
        };

        let driver = {
            let inner = self.driver.clone();
            let f = field;
            let (b, s) = (base.clone(), slope.clone());
            let mut shifted = Driver::custom(
                move |t, x, y, z, out| {
                    let ys: Vec<f64> = y.iter().zip(&b).map(|(v, s)| v + s).collect();
                    inner.eval(t, x, &ys, z, out);
                    let h = f.matrix(t, &ys);
                    for i in 0..out.len() {
                        out[i] -= (0..s.len()).map(|j| h[(i, j)] * s[j]).sum::<f64>();
                    }
                },
                self.driver.lipschitz_y(),
                self.driver.lipschitz_z(),
            );
            if !self.driver.depends_on_z() {
                shifted.lipschitz_z = 0.0;
            }
            shifted
        };

        let terminal = match &self.terminal {
            Terminal::NodeValues(v) => Terminal::NodeValues(
                v.iter()
                    .enumerate()
                    .map(|(i, val)| val - base[i % d])
                    .collect(),
            ),
            other => {
                let inner = other.clone();
                let b = base.clone();
                Terminal::function(move |x, out| {
                    inner.eval(x, out).expect("map terminal");
                    out.iter_mut().zip(&b).for_each(|(o, s)| *o -= s);
                })
            }
        };

        let problem = Self {
            grid: self.grid,
            dim: d,
            terminal,
            driver,
            convex,
            field: shifted_field,
            forward: self.forward.clone(),
            epsilon: self.epsilon,
        };
        Ok((problem, ProblemShift { base, slope }))
    }

    /// Structural agreement of the data between two problem descriptions
    /// (grids and ε excluded).
    pub fn same_data_as(&self, other: &BsviProblem) -> bool {
        self.dim == other.dim
            && self.terminal.same_as(&other.terminal)
            && self.driver.same_as(&other.driver)
            && self.convex.same_as(&other.convex)
            && self.field.same_as(&other.field)
            && self.forward.coeffs == other.forward.coeffs
    }
}
