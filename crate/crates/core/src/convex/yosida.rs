use serde::Serialize;

use super::{dot, ConvexSpec, MoreauResult};
use crate::error::{BsviError, Result};

/// Absolute slack for the inequality checks, scaled by the magnitude of the
/// terms compared so that round-off on large gradients does not register.
const SLACK: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct PropertyCheck {
    pub name: String,
    pub applicable: bool,
    pub passed: bool,
    /// Smallest `rhs − lhs` margin observed (negative means violated).
    pub worst_margin: f64,
    /// Point (or concatenated point pair) attaining the worst margin.
    pub witness: Vec<f64>,
    pub evaluations: usize,
}

impl PropertyCheck {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            applicable: true,
            passed: true,
            worst_margin: f64::INFINITY,
            witness: Vec::new(),
            evaluations: 0,
        }
    }

    fn record(&mut self, margin: f64, scale: f64, witness: impl FnOnce() -> Vec<f64>) {
        self.evaluations += 1;
        if margin < self.worst_margin {
            self.worst_margin = margin;
            self.witness = witness();
        }
        if margin < -SLACK * scale.max(1.0) {
            self.passed = false;
        }
    }

    fn not_applicable(name: &str) -> Self {
        Self {
            applicable: false,
            ..Self::new(name)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct YosidaReport {
    pub epsilon: f64,
    pub delta: f64,
    pub sample_size: usize,
    pub normalized: bool,
    /// Set when dom f has empty interior; the checks still run.
    pub empty_interior: bool,
    pub properties: Vec<PropertyCheck>,
}

impl YosidaReport {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(|p| !p.applicable || p.passed)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyCheck> {
        self.properties.iter().find(|p| p.name == name)
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// Checks the Moreau–Yosida properties of `f` over a point cloud:
///
/// * `resolvent-inclusion`: `∇f_ε(x) ∈ ∂f(J_ε x)` and `f(J_ε x) ≤ f_ε(x) ≤ f(x)`
/// * `lipschitz-gradient`: `|∇f_ε(x) − ∇f_ε(y)| ≤ |x − y|/ε`
/// * `monotone-gradient`: `⟨∇f_ε(x) − ∇f_ε(y), x − y⟩ ≥ 0`
/// * `cross-epsilon`: `⟨∇f_ε(x) − ∇f_δ(y), x − y⟩ ≥ −(ε+δ)⟨∇f_ε(x), ∇f_δ(y)⟩`
/// * `envelope-sandwich`: `(ε/2)|∇f_ε(x)|² ≤ f_ε(x) ≤ ⟨∇f_ε(x), x⟩`, only
///   when `f` is normalized (`f(0) = 0 ≤ f`)
///
/// Pair properties run over all ordered pairs of the sample.
pub fn check_yosida(f: &ConvexSpec, eps: f64, delta: f64, sample: &[Vec<f64>]) -> Result<YosidaReport> {
    if sample.is_empty() {
        return Err(BsviError::invalid("yosida check needs a non-empty sample"));
    }
    if !(delta > 0.0) {
        return Err(BsviError::invalid("delta must be > 0"));
    }
    let at_eps: Vec<MoreauResult> = sample
        .iter()
        .map(|x| f.moreau(eps, x))
        .collect::<Result<_>>()?;
    let at_delta: Vec<MoreauResult> = sample
        .iter()
        .map(|x| f.moreau(delta, x))
        .collect::<Result<_>>()?;

    let mut inclusion = PropertyCheck::new("resolvent-inclusion");
    for (x, m) in sample.iter().zip(&at_eps) {
        if let Some(inside) = f.subdifferential_contains(&m.resolvent, &m.gradient, 1e-9) {
            inclusion.record(if inside { 0.0 } else { -1.0 }, 1.0, || x.clone());
        }
        let at_j = f.eval_unchecked(&m.resolvent);
        let lower = if f.is_indicator() { 0.0 } else { at_j.to_f64() };
        let scale = m.value.abs();
        inclusion.record(m.value - lower, scale, || x.clone());
        if let Some(fx) = f.eval_unchecked(x).finite() {
            inclusion.record(fx - m.value, scale.max(fx.abs()), || x.clone());
        }
    }

    let mut lipschitz = PropertyCheck::new("lipschitz-gradient");
    let mut monotone = PropertyCheck::new("monotone-gradient");
    let mut cross = PropertyCheck::new("cross-epsilon");
    for (i, (x, mx)) in sample.iter().zip(&at_eps).enumerate() {
        for (j, (y, my)) in sample.iter().zip(&at_eps).enumerate() {
            let dxy = diff(x, y);
            if i < j {
                let dg = diff(&mx.gradient, &my.gradient);
                let bound = norm(&dxy) / eps;
                lipschitz.record(bound - norm(&dg), bound, || concat(x, y));
                let inner = dot(&dg, &dxy);
                let scale = norm(&dg) * norm(&dxy);
                monotone.record(inner, scale, || concat(x, y));
            }
            let gd = &at_delta[j].gradient;
            let lhs = dot(&diff(&mx.gradient, gd), &dxy);
            let cross_term = (eps + delta) * dot(&mx.gradient, gd);
            let scale = lhs.abs() + cross_term.abs();
            cross.record(lhs + cross_term, scale, || concat(x, y));
        }
    }

    let normalized = f.is_normalized();
    let sandwich = if normalized {
        let mut check = PropertyCheck::new("envelope-sandwich");
        for (x, m) in sample.iter().zip(&at_eps) {
            let g2 = dot(&m.gradient, &m.gradient);
            let upper = dot(&m.gradient, x);
            let scale = m.value.abs() + upper.abs();
            check.record(m.value - 0.5 * eps * g2, scale, || x.clone());
            check.record(upper - m.value, scale, || x.clone());
        }
        check
    } else {
        PropertyCheck::not_applicable("envelope-sandwich")
    };

    Ok(YosidaReport {
        epsilon: eps,
        delta,
        sample_size: sample.len(),
        normalized,
        empty_interior: !f.has_nonempty_interior(),
        properties: vec![inclusion, lipschitz, monotone, cross, sandwich],
    })
}
