use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bsde::{Backend, BsviProblem, Driver, ForwardModel, Terminal};
use crate::convex::{ConvexKind, ConvexSpec};
use crate::error::{BsviError, Result};
use crate::field::{FieldConstants, ObliqueField};
use crate::forward::{AffineCoefficients, TimeGrid};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    YosidaSuite,
    BsviSolve,
    CauchyStudy,
    GapSlope,
    CvStudy,
    FeynmanKac,
    LaggedH,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::YosidaSuite => "yosida-suite",
            ExperimentKind::BsviSolve => "bsvi-solve",
            ExperimentKind::CauchyStudy => "cauchy-study",
            ExperimentKind::GapSlope => "gap-slope",
            ExperimentKind::CvStudy => "cv-study",
            ExperimentKind::FeynmanKac => "feynman-kac",
            ExperimentKind::LaggedH => "lagged-h",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub problem: Option<ProblemConfig>,
    pub yosida: Option<YosidaConfig>,
    pub pde: Option<PdeConfig>,
    pub lagged: Option<LaggedConfig>,
    pub checks: Option<ChecksConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "one_usize")]
    pub dim: usize,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "one_f64")]
    pub horizon: f64,
    pub steps: usize,
    pub epsilon: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    /// One expression per component in `x`.
    pub terminal: Vec<String>,
    #[serde(default)]
    pub convex: ConvexConfig,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub driver: DriverConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub backend: BackendConfig,
}

fn one_usize() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConvexConfig {
    #[default]
    Zero,
    /// `{ y : ⟨normal, y⟩ ≤ offset }`.
    IndicatorHalfspace { normal: Vec<f64>, offset: f64 },
    IndicatorBox { lower: Vec<f64>, upper: Vec<f64> },
    IndicatorBall { center: Vec<f64>, radius: f64 },
    /// `½⟨Qy, y⟩` with `Q` given by rows.
    Quadratic { matrix: Vec<Vec<f64>> },
    L1 { weight: f64 },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldConfig {
    #[default]
    Identity,
    Scalar { value: f64 },
    Diagonal {
        entries: Vec<String>,
        a: f64,
        b: f64,
        lambda: f64,
    },
    RotatedDiagonal {
        angle: f64,
        entries: Vec<String>,
        a: f64,
        b: f64,
        lambda: f64,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverConfig {
    #[default]
    Zero,
    /// `F_i = y·Y_i + z·Σ_c Z_ic + x·X + constant_i`.
    Linear {
        #[serde(default)]
        y: f64,
        #[serde(default)]
        z: f64,
        #[serde(default)]
        x: f64,
        constant: Option<Vec<f64>>,
    },
}

/// Scalar affine forward model `dX = (drift + drift_slope·X)dt + (vol + vol_slope·X)dB`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub drift_slope: f64,
    #[serde(default = "one_f64")]
    pub vol: f64,
    #[serde(default)]
    pub vol_slope: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            x0: 0.0,
            drift: 0.0,
            drift_slope: 0.0,
            vol: 1.0,
            vol_slope: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    #[default]
    Lattice,
    Ensemble { paths: usize, degree: usize },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinConvex {
    HalfLine,
    Box,
    Quadratic,
    L1,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct YosidaConfig {
    #[serde(default = "all_builtins")]
    pub functions: Vec<BuiltinConvex>,
    #[serde(default = "default_yosida_eps")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Sample cloud is uniform on `[−radius, radius]^2`.
    #[serde(default = "default_radius")]
    pub radius: f64,
}

impl Default for YosidaConfig {
    fn default() -> Self {
        Self {
            functions: all_builtins(),
            epsilons: default_yosida_eps(),
            points: default_points(),
            radius: default_radius(),
        }
    }
}

fn all_builtins() -> Vec<BuiltinConvex> {
    vec![
        BuiltinConvex::HalfLine,
        BuiltinConvex::Box,
        BuiltinConvex::Quadratic,
        BuiltinConvex::L1,
    ]
}

fn default_yosida_eps() -> Vec<f64> {
    vec![1.0, 0.1, 0.01]
}

fn default_points() -> usize {
    1000
}

fn default_radius() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub n_t: usize,
    pub n_x: usize,
    /// `(t, x)` probe points.
    pub points: Vec<[f64; 2]>,
    /// Centre of the space window `x_bar ± 4√T`.
    #[serde(default)]
    pub x_bar: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LaggedConfig {
    pub partition: usize,
    #[serde(default = "default_lag")]
    pub lag: usize,
}

fn default_lag() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    pub y0_reference: Option<f64>,
    pub y0_tolerance: Option<f64>,
}

impl BuiltinConvex {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinConvex::HalfLine => "indicator-half-line",
            BuiltinConvex::Box => "indicator-box",
            BuiltinConvex::Quadratic => "quadratic",
            BuiltinConvex::L1 => "l1",
        }
    }

    /// Two-dimensional instance (the half-line acts on the first coordinate).
    pub fn spec(&self) -> ConvexSpec {
        let kind = match self {
            BuiltinConvex::HalfLine => ConvexKind::IndicatorHalfspace {
                normal: vec![-1.0, 0.0],
                offset: 0.0,
            },
            BuiltinConvex::Box => ConvexKind::IndicatorBox {
                lower: vec![-1.0, -0.5],
                upper: vec![1.0, 0.5],
            },
            BuiltinConvex::Quadratic => return ConvexSpec::half_squared_norm(2),
            BuiltinConvex::L1 => return ConvexSpec::l1(2),
        };
        ConvexSpec::new(2, kind).expect("built-in convex functions are valid")
    }
}

impl ExperimentConfig {
    pub fn parse(source: &str) -> std::result::Result<Self, String> {
        let config: Self = toml::from_str(source).map_err(|e| e.to_string())?;
        config.validate(source)?;
        Ok(config)
    }

    /// Checks that the sections required by the kind are present and that
    /// the problem builds; messages point at the offending line.
    pub fn validate(&self, source: &str) -> std::result::Result<(), String> {
        let need = |present: bool, section: &str| {
            if present {
                Ok(())
            } else {
                Err(format!(
                    "line {}: kind = \"{}\" needs a [{section}] section",
                    line_of(source, "kind"),
                    self.kind.name()
                ))
            }
        };
        match self.kind {
            ExperimentKind::YosidaSuite => return Ok(()),
            ExperimentKind::FeynmanKac => need(self.pde.is_some(), "pde")?,
            ExperimentKind::LaggedH => need(self.lagged.is_some(), "lagged")?,
            _ => {}
        }
        need(self.problem.is_some(), "problem")?;
        let p = self.problem.as_ref().expect("checked");
        let ladder_kind = matches!(
            self.kind,
            ExperimentKind::CauchyStudy | ExperimentKind::GapSlope | ExperimentKind::CvStudy
        );
        if ladder_kind && p.epsilons.is_none() {
            return Err(format!(
                "line {}: kind = \"{}\" needs problem.epsilons",
                line_of(source, "kind"),
                self.kind.name()
            ));
        }
        if !ladder_kind && p.epsilon.is_none() {
            return Err(format!(
                "line {}: kind = \"{}\" needs problem.epsilon",
                line_of(source, "kind"),
                self.kind.name()
            ));
        }
        self.build_problem(None)
            .map_err(|e| format!("line {}: invalid problem: {e}", line_of(source, "[problem")))?;
        Ok(())
    }

    /// The configured problem, with `epsilon` overriding the configured value.
    pub fn build_problem(&self, epsilon: Option<f64>) -> Result<BsviProblem> {
        let p = self
            .problem
            .as_ref()
            .ok_or_else(|| BsviError::invalid("config has no [problem] section"))?;
        let eps = epsilon
            .or(p.epsilon)
            .or_else(|| p.epsilons.as_ref().and_then(|l| l.first().copied()))
            .ok_or_else(|| BsviError::invalid("no epsilon configured"))?;
        let d = p.dim;
        let grid = TimeGrid::new(p.t0, p.t0 + p.horizon, p.steps)?;
        let terminal_refs: Vec<&str> = p.terminal.iter().map(String::as_str).collect();
        let terminal = Terminal::expressions(&terminal_refs, 1)?;
        let convex = match &p.convex {
            ConvexConfig::Zero => ConvexSpec::zero(d),
            ConvexConfig::IndicatorHalfspace { normal, offset } => ConvexSpec::new(
                d,
                ConvexKind::IndicatorHalfspace {
                    normal: normal.clone(),
                    offset: *offset,
                },
            )?,
            ConvexConfig::IndicatorBox { lower, upper } => ConvexSpec::new(
                d,
                ConvexKind::IndicatorBox {
                    lower: lower.clone(),
                    upper: upper.clone(),
                },
            )?,
            ConvexConfig::IndicatorBall { center, radius } => ConvexSpec::new(
                d,
                ConvexKind::IndicatorBall {
                    center: center.clone(),
                    radius: *radius,
                },
            )?,
            ConvexConfig::Quadratic { matrix } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(BsviError::invalid(format!("quadratic matrix must be {d}x{d}")));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                ConvexSpec::new(
                    d,
                    ConvexKind::Quadratic {
                        matrix: DMatrix::from_row_slice(d, d, &flat),
                    },
                )?
            }
            ConvexConfig::L1 { weight } => ConvexSpec::new(d, ConvexKind::L1 { weight: *weight })?,
        };
        let field = match &p.field {
            FieldConfig::Identity => ObliqueField::identity(d),
            FieldConfig::Scalar { value } => ObliqueField::scalar(d, *value)?,
            FieldConfig::Diagonal { entries, a, b, lambda } => {
                let refs: Vec<&str> = entries.iter().map(String::as_str).collect();
                ObliqueField::diagonal(
                    &refs,
                    FieldConstants {
                        a: *a,
                        b: *b,
                        lambda: *lambda,
                    },
                )?
            }
            FieldConfig::RotatedDiagonal {
                angle,
                entries,
                a,
                b,
                lambda,
            } => {
                let refs: Vec<&str> = entries.iter().map(String::as_str).collect();
                ObliqueField::rotated_diagonal(
                    *angle,
                    &refs,
                    FieldConstants {
                        a: *a,
                        b: *b,
                        lambda: *lambda,
                    },
                )?
            }
        };
        let driver = match &p.driver {
            DriverConfig::Zero => Driver::zero(),
            DriverConfig::Linear { y, z, x, constant } => {
                Driver::linear(*y, *z, *x, constant.clone().unwrap_or_else(|| vec![0.0; d]))
            }
        };
        let f = &p.forward;
        let coeffs = AffineCoefficients {
            drift_matrix: DMatrix::from_element(1, 1, f.drift_slope),
            drift_offset: vec![f.drift],
            vol_offset: DMatrix::from_element(1, 1, f.vol),
            vol_scale: DMatrix::from_element(1, 1, f.vol_slope),
        };
        BsviProblem::new(
            grid,
            terminal,
            driver,
            convex,
            field,
            ForwardModel {
                x0: vec![f.x0],
                coeffs,
            },
            eps,
        )
    }

    pub fn backend(&self) -> Backend {
        match self.problem.as_ref().map(|p| &p.backend) {
            Some(BackendConfig::Ensemble { paths, degree }) => Backend::Ensemble {
                n_paths: *paths,
                seed: self.seed,
                degree: *degree,
            },
            _ => Backend::Lattice,
        }
    }
}

/// 1-based line of the first line whose trimmed text starts with `key`,
/// or 1 when absent.
pub(crate) fn line_of(source: &str, key: &str) -> usize {
    source
        .lines()
        .position(|l| l.trim_start().starts_with(key))
        .map_or(1, |i| i + 1)
}
