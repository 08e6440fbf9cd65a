use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::bsde::{
    solve_lagged_h, solve_penalized, sup_difference, Backend, LaggedOptions, MAX_ITERATIONS, RESIDUAL_TOL,
};
use crate::convex::check_yosida;
use crate::diagnostics::{
    apriori_report, cauchy_study, conditional_variation, energy_residual, resolvent_gap, yosida_gap_slope,
    DiagnosticsReport, Status, MIN_GAP_SLOPE,
};
use crate::error::{BsviError, Result};
use crate::pde::{feynman_kac_study, PdeGrid};

/// Ratio bound on conditional variations across an ε ladder.
pub const MAX_CV_RATIO: f64 = 2.0;

/// Numeric defaults recorded in every report.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct NumericDefaults {
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    pub min_gap_slope: f64,
    pub max_cv_ratio: f64,
    pub lagged_max_sweeps: usize,
    pub lagged_tolerance: f64,
}

impl Default for NumericDefaults {
    fn default() -> Self {
        let lagged = LaggedOptions::new(1);
        Self {
            max_iterations: MAX_ITERATIONS,
            residual_tolerance: RESIDUAL_TOL,
            min_gap_slope: MIN_GAP_SLOPE,
            max_cv_ratio: MAX_CV_RATIO,
            lagged_max_sweeps: lagged.max_sweeps,
            lagged_tolerance: lagged.tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    /// Configuration with every default filled in.
    pub config: ExperimentConfig,
    pub defaults: NumericDefaults,
    pub diagnostics: DiagnosticsReport,
    pub passed: bool,
}

/// Report plus named CSV tables (file stem, contents).
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub tables: Vec<(String, String)>,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&str> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t.as_str())
    }
}

/// Hex SHA-256 of the raw configuration text.
pub fn config_hash(raw: &str) -> String {
    Sha256::digest(raw.as_bytes())
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn status(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// Runs one experiment on the current rayon pool.
pub fn execute(config: &ExperimentConfig, config_hash: &str) -> Result<RunOutput> {
    let mut report = DiagnosticsReport::default();
    report.provenance.config_hash = Some(config_hash.to_string());
    report.provenance.seed = Some(config.seed);
    let mut tables = Vec::new();
    if let Some(p) = &config.problem {
        report.provenance.dt = Some(p.horizon / p.steps as f64);
        report.provenance.epsilon = p.epsilon;
    }
    match config.kind {
        ExperimentKind::YosidaSuite => yosida_suite(config, &mut report, &mut tables)?,
        ExperimentKind::BsviSolve => bsvi_solve(config, &mut report, &mut tables)?,
        ExperimentKind::CauchyStudy => {
            let problem = config.build_problem(None)?;
            let study = cauchy_study(&problem, ladder(config)?)?;
            let mut csv = String::from("epsilon,delta,distance,ratio\n");
            for p in &study.pairs {
                let _ = writeln!(csv, "{},{},{},{}", p.epsilon, p.delta, p.distance, p.ratio);
            }
            tables.push(("cauchy".to_string(), csv));
            report.push("fitted_constant", study.fitted_constant, "C_hat", "cauchy", Status::Info);
            report.push("monotone", flag(study.monotone), "1", "cauchy", status(study.monotone));
            report.push("bounded", flag(study.bounded), "1", "cauchy", Status::Info);
            report.push("two_sided", flag(study.two_sided), "1", "cauchy", status(study.two_sided));
            report.notes.extend(problem.scope_notes());
        }
        ExperimentKind::GapSlope => {
            let problem = config.build_problem(None)?;
            let g = yosida_gap_slope(&problem, ladder(config)?)?;
            let mut csv = String::from("epsilon,gap,energy\n");
            for ((e, gap), en) in g.epsilons.iter().zip(&g.gaps).zip(&g.energies) {
                let _ = writeln!(csv, "{e},{gap},{en}");
            }
            tables.push(("gap".to_string(), csv));
            match (g.slope, g.passed) {
                (Some(s), Some(ok)) => {
                    report.push("slope", s, format!(">= {MIN_GAP_SLOPE}"), "yosida_gap", status(ok))
                }
                _ => report.push("slope", f64::NAN, format!(">= {MIN_GAP_SLOPE}"), "yosida_gap", Status::Info),
            }
            if let Some(a) = g.analytic_slope {
                report.push("analytic_slope", a, "2", "yosida_gap", Status::Info);
            }
            report.notes.extend(g.note);
            report.notes.extend(problem.scope_notes());
        }
        ExperimentKind::CvStudy => {
            let problem = config.build_problem(None)?;
            let mut csv = String::from("epsilon,cv\n");
            let mut values = Vec::new();
            for eps in ladder(config)? {
                let s = solve_penalized(&problem.with_epsilon(*eps)?, &Backend::Lattice)?;
                let lattice = s.lattice().expect("lattice backend");
                let cv = conditional_variation(&s.y, s.dim, lattice)?;
                let _ = writeln!(csv, "{eps},{cv}");
                values.push(cv);
            }
            tables.push(("cv".to_string(), csv));
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let ratio = if max == 0.0 { 1.0 } else { max / min };
            report.push("cv_max", max, "finite", "conditional_variation", Status::Info);
            report.push(
                "cv_ratio",
                ratio,
                format!("<= {MAX_CV_RATIO}"),
                "conditional_variation",
                status(ratio <= MAX_CV_RATIO),
            );
            report.notes.extend(problem.scope_notes());
        }
        ExperimentKind::FeynmanKac => {
            let problem = config.build_problem(None)?;
            let pde = config.pde.as_ref().expect("validated");
            let grid = PdeGrid::centered(pde.x_bar, problem.grid.t_end(), pde.n_t, pde.n_x)?;
            let points: Vec<(f64, f64)> = pde.points.iter().map(|p| (p[0], p[1])).collect();
            let probes = feynman_kac_study(&problem, &grid, &points)?;
            let mut csv = String::from("t,x,pde,bsde,error,budget,passed\n");
            for (i, p) in probes.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    p.t, p.x, p.pde, p.bsde, p.error, p.budget, p.passed
                );
                report.push(
                    format!("probe_{i}_error"),
                    p.error,
                    format!("<= {}", p.budget),
                    "feynman_kac",
                    status(p.passed),
                );
            }
            tables.push(("feynman_kac".to_string(), csv));
            report.notes.push(crate::pde::BOUNDARY.to_string());
        }
        ExperimentKind::LaggedH => {
            let problem = config.build_problem(None)?;
            let lag = config.lagged.as_ref().expect("validated");
            let mut options = LaggedOptions::new(lag.partition);
            options.lag = lag.lag;
            let lagged = solve_lagged_h(&problem, options)?;
            let direct = solve_penalized(&problem, &Backend::Lattice)?;
            let mut csv = String::from("sweep,difference\n");
            for (i, d) in lagged.sweep_differences.iter().enumerate() {
                let _ = writeln!(csv, "{},{d}", i + 1);
            }
            tables.push(("lagged".to_string(), csv));
            let mut sol = Vec::new();
            lagged.solution.write_csv(&mut sol).map_err(io_error)?;
            tables.push(("solution".to_string(), String::from_utf8(sol).expect("utf8 csv")));
            report.push("sweeps", lagged.sweeps as f64, "<= max_sweeps", "lagged", Status::Pass);
            report.push("y0", lagged.solution.y0()[0], "", "lagged", Status::Info);
            report.push(
                "gap_to_direct",
                sup_difference(&lagged.solution.y, &direct.y),
                "sup |Y_lagged − Y_direct|",
                "lagged",
                Status::Info,
            );
            report.notes.extend(problem.scope_notes());
        }
    }
    apply_checks(config, &mut report);
    let passed = report.all_passed();
    Ok(RunOutput {
        report: RunReport {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: config.kind,
            config_hash: config_hash.to_string(),
            seed: config.seed,
            config: config.clone(),
            defaults: NumericDefaults::default(),
            diagnostics: report,
            passed,
        },
        tables,
    })
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn io_error(e: std::io::Error) -> BsviError {
    BsviError::invalid(format!("writing table: {e}"))
}

fn ladder(config: &ExperimentConfig) -> Result<&[f64]> {
    config
        .problem
        .as_ref()
        .and_then(|p| p.epsilons.as_deref())
        .ok_or_else(|| BsviError::invalid("no epsilon ladder configured"))
}

fn yosida_suite(
    config: &ExperimentConfig,
    report: &mut DiagnosticsReport,
    tables: &mut Vec<(String, String)>,
) -> Result<()> {
    let y = config.yosida.clone().unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let r = y.radius;
    let cloud: Vec<Vec<f64>> = (0..y.points)
        .map(|_| vec![rng.random_range(-r..r), rng.random_range(-r..r)])
        .collect();
    let mut csv = String::from("function,epsilon,property,applicable,passed,worst_margin,evaluations\n");
    for f in &y.functions {
        let spec = f.spec();
        for eps in &y.epsilons {
            let rep = check_yosida(&spec, *eps, eps / 2.0, &cloud)?;
            for p in &rep.properties {
                let _ = writeln!(
                    csv,
                    "{},{eps},{},{},{},{},{}",
                    f.name(),
                    p.name,
                    p.applicable,
                    p.passed,
                    p.worst_margin,
                    p.evaluations
                );
            }
            let ok = rep.all_passed();
            report.push(
                format!("{}/eps={eps}", f.name()),
                flag(ok),
                "all properties hold",
                "yosida",
                status(ok),
            );
        }
    }
    tables.push(("yosida".to_string(), csv));
    Ok(())
}

fn bsvi_solve(
    config: &ExperimentConfig,
    report: &mut DiagnosticsReport,
    tables: &mut Vec<(String, String)>,
) -> Result<()> {
    let problem = config.build_problem(None)?;
    let s = solve_penalized(&problem, &config.backend())?;
    let mut csv = Vec::new();
    s.write_csv(&mut csv).map_err(io_error)?;
    tables.push(("solution".to_string(), String::from_utf8(csv).expect("utf8 csv")));
    let y0 = s.y0();
    if y0.len() == 1 {
        report.push("y0", y0[0], "", "plumbing", Status::Info);
    } else {
        for (i, v) in y0.iter().enumerate() {
            report.push(format!("y0_{}", i + 1), *v, "", "plumbing", Status::Info);
        }
    }
    report.push(
        "max_residual",
        s.metadata.max_residual,
        format!("<= {RESIDUAL_TOL}"),
        "plumbing",
        Status::Info,
    );
    report.push(
        "total_iterations",
        s.metadata.total_iterations as f64,
        "",
        "plumbing",
        Status::Info,
    );
    if s.lattice().is_some() {
        let (gap, energy) = resolvent_gap(&s, problem.epsilon)?;
        report.push("gap", gap, "O(eps^2)", "yosida_gap", Status::Info);
        report.push("energy_y", energy, "", "yosida_gap", Status::Info);
        let profile = energy_residual(&s, &problem)?;
        report.push("energy_identity_max", profile.max, "", "energy_identity", Status::Info);
        match apriori_report(&s, &problem) {
            Ok(r) => report.merge("apriori/", r),
            Err(BsviError::DataViolation(msg)) => report.notes.push(format!("a priori report skipped: {msg}")),
            Err(e) => return Err(e),
        }
    }
    report.notes.extend(s.metadata.notes.iter().cloned());
    report.notes.extend(problem.scope_notes());
    Ok(())
}

fn apply_checks(config: &ExperimentConfig, report: &mut DiagnosticsReport) {
    let Some(checks) = &config.checks else { return };
    let (Some(reference), Some(y0)) = (checks.y0_reference, report.value("y0")) else {
        return;
    };
    let error = (y0 - reference).abs();
    match checks.y0_tolerance {
        Some(tol) => report.push("y0_error", error, format!("<= {tol}"), "check", status(error <= tol)),
        None => report.push("y0_error", error, "", "check", Status::Info),
    }
}

/// Writes `report.json` and `tables/*.csv` under `out`.
pub fn write_outputs(out: &Path, output: &RunOutput) -> std::io::Result<()> {
    fs::create_dir_all(out.join("tables"))?;
    let json = serde_json::to_string_pretty(&output.report).expect("report serializes");
    fs::write(out.join("report.json"), json + "\n")?;
    for (name, csv) in &output.tables {
        fs::write(out.join("tables").join(format!("{name}.csv")), csv)?;
    }
    Ok(())
}
