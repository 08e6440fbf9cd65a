//! The oblique reflection matrix `H(t, y)`: evaluation with its inverse and
//! inverse square root, plus sampled validation of the structural
//! hypotheses (symmetry, ellipticity `≥ a`, Frobenius bounds `≤ b` on `H`
//! and `H⁻¹`, Lipschitz constant `Λ` in `y`).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{BsviError, Result};
use crate::expr::{indexed_lookup, indexed_names, ScalarExpr};

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_FLOOR: f64 = 1e-14;
const BOUND_SLACK: f64 = 1e-10;

type MatrixFn = dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
pub enum FieldMap {
    Identity,
    Scalar(f64),
    Constant(DMatrix<f64>),
    /// `diag(e_1(t, y), …, e_d(t, y))`.
    Diagonal(Vec<ScalarExpr>),
    /// `R(angle) · diag(e_1, e_2) · R(angle)ᵀ`, two dimensions only.
    RotatedDiagonal { angle: f64, entries: Vec<ScalarExpr> },
    Custom(Arc<MatrixFn>),
}

impl fmt::Debug for FieldMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldMap::Identity => write!(f, "Identity"),
            FieldMap::Scalar(c) => write!(f, "Scalar({c})"),
            FieldMap::Constant(m) => write!(f, "Constant({:?})", m.as_slice()),
            FieldMap::Diagonal(e) => f.debug_tuple("Diagonal").field(e).finish(),
            FieldMap::RotatedDiagonal { angle, entries } => f
                .debug_struct("RotatedDiagonal")
                .field("angle", angle)
                .field("entries", entries)
                .finish(),
            FieldMap::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Declared structural constants of a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FieldConstants {
    /// ellipticity: `⟨H u, u⟩ ≥ a|u|²`
    pub a: f64,
    /// Frobenius bound on `H` and `H⁻¹`
    pub b: f64,
    /// Lipschitz constant in `y` of `H` and of `H⁻¹`
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct ObliqueField {
    dim: usize,
    map: FieldMap,
    constants: FieldConstants,
    time_only: bool,
}

/// `(H, H⁻¹, H^{-1/2})` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldEval {
    pub h: DMatrix<f64>,
    pub h_inv: DMatrix<f64>,
    pub h_inv_sqrt: DMatrix<f64>,
}

impl ObliqueField {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            map: FieldMap::Identity,
            constants: FieldConstants {
                a: 1.0,
                b: (dim as f64).sqrt(),
                lambda: 0.0,
            },
            time_only: true,
        }
    }

    /// `c·I`; constants default to the tightest valid values.
    pub fn scalar(dim: usize, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(BsviError::invalid("scalar field requires a finite c > 0"));
        }
        let rd = (dim as f64).sqrt();
        Ok(Self {
            dim,
            map: FieldMap::Scalar(c),
            constants: FieldConstants {
                a: c,
                b: (c * rd).max(rd / c),
                lambda: 0.0,
            },
            time_only: true,
        })
    }

    /// Diagonal field from per-entry expressions in `t` and `y1..yd`
    /// (`y` is accepted for `y1`).
    pub fn diagonal(entries: &[&str], constants: FieldConstants) -> Result<Self> {
        let dim = entries.len();
        let exprs = parse_entries(entries, dim)?;
        let time_only = !exprs.iter().any(|e| uses_state(e, dim));
        Self::with_map(dim, FieldMap::Diagonal(exprs), constants, time_only)
    }

    pub fn rotated_diagonal(angle: f64, entries: &[&str], constants: FieldConstants) -> Result<Self> {
        if entries.len() != 2 {
            return Err(BsviError::invalid("rotated-diagonal field is two-dimensional"));
        }
        let exprs = parse_entries(entries, 2)?;
        let time_only = !exprs.iter().any(|e| uses_state(e, 2));
        Self::with_map(
            2,
            FieldMap::RotatedDiagonal {
                angle,
                entries: exprs,
            },
            constants,
            time_only,
        )
    }

    pub fn constant(matrix: DMatrix<f64>, constants: FieldConstants) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(BsviError::invalid("field matrix must be square"));
        }
        let dim = matrix.nrows();
        Self::with_map(dim, FieldMap::Constant(matrix), constants, true)
    }

    /// Programmatic field. `time_only` must be declared by the caller.
    pub fn custom(
        dim: usize,
        map: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        constants: FieldConstants,
        time_only: bool,
    ) -> Result<Self> {
        Self::with_map(dim, FieldMap::Custom(Arc::new(map)), constants, time_only)
    }

    fn with_map(dim: usize, map: FieldMap, constants: FieldConstants, time_only: bool) -> Result<Self> {
        if dim == 0 {
            return Err(BsviError::invalid("field dimension must be positive"));
        }
        if !(constants.a > 0.0) || !(constants.b > 0.0) || !(constants.lambda >= 0.0) {
            return Err(BsviError::invalid(format!(
                "field constants require a > 0, b > 0, lambda >= 0 (got {constants:?})"
            )));
        }
        Ok(Self {
            dim,
            map,
            constants,
            time_only,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> FieldConstants {
        self.constants
    }

    pub fn map(&self) -> &FieldMap {
        &self.map
    }

    pub fn is_time_only(&self) -> bool {
        self.time_only
    }

    /// Declared `a < 1`: accepted, but reported.
    pub fn ellipticity_below_one(&self) -> bool {
        self.constants.a < 1.0
    }

    /// `Some(c)` when `H ≡ c·I` for every `(t, y)`.
    pub fn constant_scalar(&self) -> Option<f64> {
        match &self.map {
            FieldMap::Identity => Some(1.0),
            FieldMap::Scalar(c) => Some(*c),
            _ => None,
        }
    }

    /// Raw matrix `H(t, y)` without hypothesis checks.
    pub fn matrix(&self, t: f64, y: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        match &self.map {
            FieldMap::Identity => DMatrix::identity(d, d),
            FieldMap::Scalar(c) => DMatrix::identity(d, d) * *c,
            FieldMap::Constant(m) => m.clone(),
            FieldMap::Diagonal(entries) => {
                let vals: Vec<f64> = entries.iter().map(|e| eval_entry(e, t, y)).collect();
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals))
            }
            FieldMap::RotatedDiagonal { angle, entries } => {
                let (s, c) = angle.sin_cos();
                let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
                let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
                    entries.iter().map(|e| eval_entry(e, t, y)).collect(),
                ));
                &rot * diag * rot.transpose()
            }
            FieldMap::Custom(f) => f(t, y),
        }
    }

    /// `(H, H⁻¹, H^{-1/2})` at `(t, y)`, failing on the first violated
    /// pointwise hypothesis: symmetry, positive definiteness, ellipticity
    /// against the declared `a`, Frobenius bounds against the declared `b`.
    pub fn eval(&self, t: f64, y: &[f64]) -> Result<FieldEval> {
        if y.len() != self.dim {
            return Err(BsviError::dim_mismatch("field evaluation point", self.dim, y.len()));
        }
        if !t.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(BsviError::invalid("field evaluated at a non-finite point"));
        }
        let h = self.matrix(t, y);
        let violation = |condition: &str, detail: String| BsviError::HypothesisViolation {
            condition: condition.to_string(),
            t,
            y: y.to_vec(),
            detail,
        };
        if h.nrows() != self.dim || h.ncols() != self.dim {
            return Err(violation(
                "shape",
                format!("matrix is {}x{}, expected {d}x{d}", h.nrows(), h.ncols(), d = self.dim),
            ));
        }
        if let Some((i, j, gap)) = worst_asymmetry(&h) {
            if gap > SYMMETRY_TOL || gap.is_nan() {
                return Err(violation(
                    "symmetry",
                    format!("|h[{}][{}] - h[{}][{}]| = {gap:e}", i + 1, j + 1, j + 1, i + 1),
                ));
            }
        }
        let (h_inv, h_inv_sqrt, min_eig) = if self.dim == 1 {
            let v = h[(0, 0)];
            (
                DMatrix::from_element(1, 1, 1.0 / v),
                DMatrix::from_element(1, 1, 1.0 / v.sqrt()),
                v,
            )
        } else {
            let eig = h.clone().symmetric_eigen();
            let min_eig = eig.eigenvalues.min();
            if min_eig > EIGEN_FLOOR {
                let inv = eig.eigenvalues.map(|l| 1.0 / l);
                let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
                let q = &eig.eigenvectors;
                (
                    q * DMatrix::from_diagonal(&inv) * q.transpose(),
                    q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose(),
                    min_eig,
                )
            } else {
                (DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), min_eig)
            }
        };
        if !(min_eig > EIGEN_FLOOR) {
            return Err(violation(
                "positive-definite",
                format!("smallest eigenvalue {min_eig:e} below floor {EIGEN_FLOOR:e}"),
            ));
        }
        if min_eig < self.constants.a - BOUND_SLACK {
            return Err(violation(
                "ellipticity",
                format!("smallest eigenvalue {min_eig} < declared a = {}", self.constants.a),
            ));
        }
        let (nh, ninv) = (h.norm(), h_inv.norm());
        if nh > self.constants.b + BOUND_SLACK {
            return Err(violation(
                "bound-h",
                format!("|H|_F = {nh} > declared b = {}", self.constants.b),
            ));
        }
        if ninv > self.constants.b + BOUND_SLACK {
            return Err(violation(
                "bound-h-inverse",
                format!("|H^-1|_F = {ninv} > declared b = {}", self.constants.b),
            ));
        }
        Ok(FieldEval {
            h,
            h_inv,
            h_inv_sqrt,
        })
    }

    /// Structural equality for cross-solver consistency checks; custom maps
    /// compare by identity.
    pub fn same_as(&self, other: &ObliqueField) -> bool {
        if self.dim != other.dim || self.constants != other.constants {
            return false;
        }
        match (&self.map, &other.map) {
            (FieldMap::Identity, FieldMap::Identity) => true,
            (FieldMap::Scalar(a), FieldMap::Scalar(b)) => a == b,
            (FieldMap::Constant(a), FieldMap::Constant(b)) => a == b,
            (FieldMap::Diagonal(a), FieldMap::Diagonal(b)) => a == b,
            (
                FieldMap::RotatedDiagonal { angle: a, entries: e },
                FieldMap::RotatedDiagonal { angle: b, entries: f },
            ) => a == b && e == f,
            (FieldMap::Custom(a), FieldMap::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

fn parse_entries(entries: &[&str], dim: usize) -> Result<Vec<ScalarExpr>> {
    let names = indexed_names("y", dim);
    let mut allowed: Vec<&str> = vec!["t"];
    if dim >= 1 {
        allowed.push("y");
    }
    allowed.extend(names.iter().map(String::as_str));
    entries.iter().map(|e| ScalarExpr::parse(e, &allowed)).collect()
}

fn uses_state(e: &ScalarExpr, dim: usize) -> bool {
    e.uses("y") || indexed_names("y", dim).iter().any(|n| e.uses(n))
}

fn eval_entry(e: &ScalarExpr, t: f64, y: &[f64]) -> f64 {
    e.eval_with(|name| {
        if name == "t" {
            t
        } else {
            indexed_lookup(name, "y", y).unwrap_or(f64::NAN)
        }
    })
}

/// `(i, j, |h_ij − h_ji|)` for the most asymmetric off-diagonal pair.
fn worst_asymmetry(h: &DMatrix<f64>) -> Option<(usize, usize, f64)> {
    let n = h.nrows();
    let mut worst: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (h[(i, j)] - h[(j, i)]).abs();
            if worst.is_none_or(|(_, _, w)| gap > w || gap.is_nan()) {
                worst = Some((i, j, gap));
            }
        }
    }
    worst
}

/// One row of a [`FieldReport`].
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FieldCheck {
    pub condition: String,
    pub passed: bool,
    /// Worst observed value (asymmetry, min eigenvalue, norm, quotient).
    pub worst_value: f64,
    pub declared: f64,
    pub witness_t: f64,
    pub witness_y: Vec<f64>,
    /// 1-based matrix entry for the symmetry condition.
    pub witness_entry: Option<[usize; 2]>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FieldReport {
    pub checks: Vec<FieldCheck>,
    pub ellipticity_below_one: bool,
    pub points_sampled: usize,
    pub pairs_sampled: usize,
}

impl FieldReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, condition: &str) -> Option<&FieldCheck> {
        self.checks.iter().find(|c| c.condition == condition)
    }
}

/// Axis-aligned sampling region for `y`.
#[derive(Clone, Debug)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Samples a regular grid over `region` at each time in `times` and checks
/// every hypothesis on `H`. Failures are report entries, never errors.
/// The Lipschitz quotients are taken over grid neighbours along each axis,
/// separately for `H` and `H⁻¹`.
pub fn validate_hypotheses(
    field: &ObliqueField,
    region: &Region,
    points_per_axis: usize,
    times: &[f64],
) -> Result<FieldReport> {
    let d = field.dim;
    if region.lower.len() != d || region.upper.len() != d {
        return Err(BsviError::dim_mismatch("validation region", d, region.lower.len()));
    }
    if region.lower.iter().zip(&region.upper).any(|(l, u)| !(l < u)) {
        return Err(BsviError::invalid("validation region is degenerate"));
    }
    if points_per_axis < 2 {
        return Err(BsviError::invalid("need at least 2 points per axis"));
    }
    if times.is_empty() {
        return Err(BsviError::invalid("need at least one sampling time"));
    }
    let c = field.constants;
    let new_check = |condition: &str, worst: f64, declared: f64| FieldCheck {
        condition: condition.to_string(),
        passed: true,
        worst_value: worst,
        declared,
        witness_t: f64::NAN,
        witness_y: Vec::new(),
        witness_entry: None,
    };
    let mut symmetry = new_check("symmetry", 0.0, SYMMETRY_TOL);
    let mut ellipticity = new_check("ellipticity", f64::INFINITY, c.a);
    let mut bound_h = new_check("bound-h", 0.0, c.b);
    let mut bound_inv = new_check("bound-h-inverse", 0.0, c.b);
    let mut lip_h = new_check("lipschitz-h", 0.0, c.lambda);
    let mut lip_inv = new_check("lipschitz-h-inverse", 0.0, c.lambda);

    let n_points = points_per_axis.pow(d as u32);
    let step: Vec<f64> = region
        .lower
        .iter()
        .zip(&region.upper)
        .map(|(l, u)| (u - l) / (points_per_axis - 1) as f64)
        .collect();
    let point_at = |mut idx: usize| -> Vec<f64> {
        (0..d)
            .map(|axis| {
                let i = idx % points_per_axis;
                idx /= points_per_axis;
                region.lower[axis] + i as f64 * step[axis]
            })
            .collect()
    };
    let mut pairs = 0usize;
    for &t in times {
        let mut cache: Vec<(DMatrix<f64>, Option<DMatrix<f64>>)> = Vec::with_capacity(n_points);
        for idx in 0..n_points {
            let y = point_at(idx);
            let h = field.matrix(t, &y);
            if let Some((i, j, gap)) = worst_asymmetry(&h) {
                if gap > symmetry.worst_value || gap.is_nan() {
                    symmetry.worst_value = gap;
                    symmetry.witness_t = t;
                    symmetry.witness_y = y.clone();
                    symmetry.witness_entry = Some([i + 1, j + 1]);
                }
            }
            let sym = (&h + h.transpose()) * 0.5;
            let eig = sym.clone().symmetric_eigen();
            let min_eig = eig.eigenvalues.min();
            if min_eig < ellipticity.worst_value || min_eig.is_nan() {
                ellipticity.worst_value = min_eig;
                ellipticity.witness_t = t;
                ellipticity.witness_y = y.clone();
            }
            let nh = h.norm();
            if nh > bound_h.worst_value {
                bound_h.worst_value = nh;
                bound_h.witness_t = t;
                bound_h.witness_y = y.clone();
            }
            let inv = h.clone().try_inverse();
            match &inv {
                Some(m) => {
                    let ni = m.norm();
                    if ni > bound_inv.worst_value {
                        bound_inv.worst_value = ni;
                        bound_inv.witness_t = t;
                        bound_inv.witness_y = y.clone();
                    }
                }
                None => {
                    bound_inv.worst_value = f64::INFINITY;
                    bound_inv.witness_t = t;
                    bound_inv.witness_y = y.clone();
                }
            }
            cache.push((h, inv));
        }
        for idx in 0..n_points {
            let mut stride = 1;
            for axis in 0..d {
                let coord = (idx / stride) % points_per_axis;
                if coord + 1 < points_per_axis {
                    let nb = idx + stride;
                    let dist = step[axis];
                    let (h0, i0) = &cache[idx];
                    let (h1, i1) = &cache[nb];
                    pairs += 1;
                    let q = (h1 - h0).norm() / dist;
                    if q > lip_h.worst_value {
                        lip_h.worst_value = q;
                        lip_h.witness_t = t;
                        lip_h.witness_y = point_at(idx);
                    }
                    if let (Some(a), Some(b)) = (i0, i1) {
                        let q = (b - a).norm() / dist;
                        if q > lip_inv.worst_value {
                            lip_inv.worst_value = q;
                            lip_inv.witness_t = t;
                            lip_inv.witness_y = point_at(idx);
                        }
                    }
                }
                stride *= points_per_axis;
            }
        }
    }
    symmetry.passed = symmetry.worst_value <= SYMMETRY_TOL;
    ellipticity.passed = ellipticity.worst_value >= c.a - BOUND_SLACK;
    bound_h.passed = bound_h.worst_value <= c.b + BOUND_SLACK;
    bound_inv.passed = bound_inv.worst_value <= c.b + BOUND_SLACK;
    lip_h.passed = lip_h.worst_value <= c.lambda + BOUND_SLACK;
    lip_inv.passed = lip_inv.worst_value <= c.lambda + BOUND_SLACK;
    Ok(FieldReport {
        checks: vec![symmetry, ellipticity, bound_h, bound_inv, lip_h, lip_inv],
        ellipticity_below_one: field.ellipticity_below_one(),
        points_sampled: n_points * times.len(),
        pairs_sampled: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn approx_eq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    #[test]
    fn identity_field() {
        let f = ObliqueField::identity(2);
        let e = f.eval(0.3, &[1.0, -5.0]).unwrap();
        let id = DMatrix::identity(2, 2);
        assert_eq!(e.h, id);
        assert!(approx_eq(&e.h_inv, &id, 1e-15));
        assert!(approx_eq(&e.h_inv_sqrt, &id, 1e-15));
    }

    #[test]
    fn scalar_four() {
        let f = ObliqueField::scalar(2, 4.0).unwrap();
        let e = f.eval(0.0, &[0.0, 0.0]).unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(approx_eq(&e.h, &(&id * 4.0), 0.0));
        assert!(approx_eq(&e.h_inv, &(&id * 0.25), 1e-15));
        assert!(approx_eq(&e.h_inv_sqrt, &(&id * 0.5), 1e-15));
    }

    #[test]
    fn state_dependent_diagonal() {
        let f = ObliqueField::diagonal(
            &["2 + sin(y1)", "2"],
            FieldConstants {
                a: 1.0,
                b: 5.0,
                lambda: 1.5,
            },
        )
        .unwrap();
        assert!(!f.is_time_only());
        let e = f.eval(0.0, &[FRAC_PI_2, 0.0]).unwrap();
        let expect = |a: f64, b: f64| DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b]);
        assert!(approx_eq(&e.h, &expect(3.0, 2.0), 1e-15));
        assert!(approx_eq(&e.h_inv, &expect(1.0 / 3.0, 0.5), 1e-12));
        assert!(approx_eq(
            &e.h_inv_sqrt,
            &expect(3f64.powf(-0.5), 2f64.powf(-0.5)),
            1e-12
        ));
    }

    #[test]
    fn non_symmetric_raises_and_reports_entry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let f = ObliqueField::constant(
            m,
            FieldConstants {
                a: 0.1,
                b: 10.0,
                lambda: 0.0,
            },
        )
        .unwrap();
        match f.eval(0.0, &[0.0, 0.0]) {
            Err(BsviError::HypothesisViolation { condition, .. }) => assert_eq!(condition, "symmetry"),
            other => panic!("{other:?}"),
        }
        let region = Region {
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
        };
        let report = validate_hypotheses(&f, &region, 3, &[0.0]).unwrap();
        let sym = report.check("symmetry").unwrap();
        assert!(!sym.passed);
        assert_eq!(sym.witness_entry, Some([1, 2]));
    }

    #[test]
    fn identity_validates() {
        let f = ObliqueField::constant(
            DMatrix::identity(2, 2),
            FieldConstants {
                a: 1.0,
                b: 2.0,
                lambda: 0.0,
            },
        )
        .unwrap();
        let region = Region {
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
        };
        let report = validate_hypotheses(&f, &region, 5, &[0.0, 1.0]).unwrap();
        assert!(report.all_passed(), "{report:#?}");
    }

    #[test]
    fn sine_field_validates_with_sampled_lipschitz_quotient() {
        let f = ObliqueField::diagonal(
            &["2 + sin(y1)", "2 + sin(y1)"],
            FieldConstants {
                a: 1.0,
                b: 5.0,
                lambda: 1.5,
            },
        )
        .unwrap();
        let region = Region {
            lower: vec![-3.0, -3.0],
            upper: vec![3.0, 3.0],
        };
        let report = validate_hypotheses(&f, &region, 20, &[0.0]).unwrap();
        assert!(report.all_passed(), "{report:#?}");
        let q = report.check("lipschitz-h").unwrap().worst_value;
        assert!(q <= 2f64.sqrt() + 1e-12, "{q}");
    }

    #[test]
    fn eval_and_validate_agree_on_ellipticity() {
        // declared a = 1.5 but H = 1 + t: violated for t < 0.5
        let f = ObliqueField::diagonal(
            &["1 + t"],
            FieldConstants {
                a: 1.5,
                b: 3.0,
                lambda: 0.0,
            },
        )
        .unwrap();
        let region = Region {
            lower: vec![-1.0],
            upper: vec![1.0],
        };
        let report = validate_hypotheses(&f, &region, 4, &[0.0]).unwrap();
        assert!(!report.check("ellipticity").unwrap().passed);
        match f.eval(0.0, &[0.0]) {
            Err(BsviError::HypothesisViolation { condition, .. }) => assert_eq!(condition, "ellipticity"),
            other => panic!("{other:?}"),
        }
        assert!(f.eval(0.8, &[0.0]).is_ok());
    }

    #[test]
    fn small_a_is_a_warning_only() {
        let f = ObliqueField::scalar(1, 0.5).unwrap();
        assert!(f.ellipticity_below_one());
        assert!(f.eval(0.0, &[1.0]).is_ok());
    }

    #[test]
    fn time_only_field_ignores_state() {
        let f = ObliqueField::rotated_diagonal(
            0.4,
            &["1 + t", "3 - t"],
            FieldConstants {
                a: 1.0,
                b: 5.0,
                lambda: 0.0,
            },
        )
        .unwrap();
        assert!(f.is_time_only());
        let base = f.eval(0.5, &[0.0, 0.0]).unwrap();
        for k in 0..8 {
            let y = [k as f64 * 1.7 - 6.0, 13.0 - 3.1 * k as f64];
            let e = f.eval(0.5, &y).unwrap();
            assert!(approx_eq(&e.h, &base.h, 1e-14));
        }
    }

    #[test]
    fn inverse_square_root_whitens() {
        let f = ObliqueField::rotated_diagonal(
            1.1,
            &["2 + sin(y1)", "1.5 + 0.5*cos(y2)"],
            FieldConstants {
                a: 1.0,
                b: 5.0,
                lambda: 2.0,
            },
        )
        .unwrap();
        for k in 0..10 {
            let y = [0.37 * k as f64, -0.91 * k as f64];
            let e = f.eval(0.0, &y).unwrap();
            let w = &e.h_inv_sqrt * &e.h * &e.h_inv_sqrt;
            assert!(approx_eq(&w, &DMatrix::identity(2, 2), 1e-9));
            assert!(approx_eq(&(&e.h_inv * &e.h), &DMatrix::identity(2, 2), 1e-10));
            assert!(approx_eq(&(&e.h_inv_sqrt * &e.h_inv_sqrt), &e.h_inv, 1e-10));
        }
    }
}
