//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use bsvi::bsde::{
    solve_lagged_h, solve_penalized, sup_difference, Backend, BsviProblem, Driver, ForwardModel, LaggedOptions,
    Terminal,
};
use bsvi::convex::ConvexSpec;
use bsvi::diagnostics::{
    apriori_sweep, cauchy_study, conditional_variation, yosida_gap_slope, MIN_GAP_SLOPE,
};
use bsvi::field::{FieldConstants, ObliqueField};
use bsvi::forward::{build_lattice, TimeGrid};
use bsvi::pde::{compare_feynman_kac, feynman_kac_study, solve_pde_penalized, PdeGrid};
use bsvi::runner::{config_hash, execute, run_command, BuiltinConvex, ExperimentConfig, YosidaConfig};

type Check = Result<String, String>;

/// Name, optional wall-clock limit in seconds, check.
type Criterion = (&'static str, Option<f64>, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn problem(n: usize, terminal: &str, driver: Driver, convex: ConvexSpec, field: ObliqueField, eps: f64) -> BsviProblem {
    BsviProblem::new(
        TimeGrid::new(0.0, 1.0, n).unwrap(),
        Terminal::expressions(&[terminal], 1).unwrap(),
        driver,
        convex,
        field,
        ForwardModel::brownian(0.0),
        eps,
    )
    .unwrap()
}

/// η = B_T⁺, F ≡ −1, φ = indicator of [0, ∞), 16 steps.
fn indicator_problem(field: ObliqueField, eps: f64) -> BsviProblem {
    problem(
        16,
        "max(x, 0)",
        Driver::linear(0.0, 0.0, 0.0, vec![-1.0]),
        ConvexSpec::nonneg_half_line(),
        field,
        eps,
    )
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs")
}

fn load(name: &str) -> (ExperimentConfig, String) {
    let raw = fs::read_to_string(configs_dir().join(name)).unwrap();
    (ExperimentConfig::parse(&raw).unwrap(), config_hash(&raw))
}

fn yosida_suite() -> Check {
    let (config, hash) = load("yosida_suite.toml");
    assert_eq!(config.yosida, Some(YosidaConfig::default()));
    let out = execute(&config, &hash).map_err(|e| e.to_string())?;
    let failing: Vec<&str> = out
        .report
        .diagnostics
        .metrics
        .iter()
        .filter(|m| m.value != 1.0)
        .map(|m| m.name.as_str())
        .collect();
    if !failing.is_empty() {
        return Err(format!("property failures: {failing:?}"));
    }
    // closed forms evaluated independently of the toolkit
    let closed = |f: BuiltinConvex, x: &[f64], eps: f64| -> Vec<f64> {
        match f {
            BuiltinConvex::HalfLine => vec![x[0].max(0.0), x[1]],
            BuiltinConvex::Box => vec![x[0].clamp(-1.0, 1.0), x[1].clamp(-0.5, 0.5)],
            BuiltinConvex::Quadratic => x.iter().map(|v| v / (1.0 + eps)).collect(),
            BuiltinConvex::L1 => x.iter().map(|v| v.signum() * (v.abs() - eps).max(0.0)).collect(),
        }
    };
    let mut worst = 0.0f64;
    for f in [
        BuiltinConvex::HalfLine,
        BuiltinConvex::Box,
        BuiltinConvex::Quadratic,
        BuiltinConvex::L1,
    ] {
        let spec = f.spec();
        for eps in [1.0, 0.1, 0.01] {
            for i in 0..1000 {
                let s = i as f64;
                let x = [2.0 * (0.37 * s).sin(), 2.0 * (0.91 * s + 0.3).cos()];
                let p = spec.prox(&x, eps).unwrap();
                for (a, b) in p.iter().zip(closed(f, &x, eps)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    ensure(
        worst <= 1e-12,
        format!("{} property sets pass; max closed-form prox error {worst:.1e}", out.report.diagnostics.metrics.len()),
    )
}

fn decay_y0(n: usize) -> f64 {
    let p = problem(
        n,
        "1",
        Driver::linear(-1.0, 0.0, 0.0, vec![0.0]),
        ConvexSpec::zero(1),
        ObliqueField::identity(1),
        0.1,
    );
    solve_penalized(&p, &Backend::Lattice).unwrap().y0()[0]
}

fn lipschitz_degeneracy() -> Check {
    let target = (-1.0f64).exp();
    let e128 = (decay_y0(128) - target).abs();
    let e256 = (decay_y0(256) - target).abs();
    let ratio = e128 / e256;
    ensure(
        e128 <= 5e-3 && (ratio - 2.0).abs() <= 0.3 * 2.0,
        format!("|Y0 - e^-1| = {e128:.3e} at 128 steps, error ratio 128/256 = {ratio:.3}"),
    )
}

fn martingale_exactness() -> Check {
    let n = 64;
    let p = problem(n, "x", Driver::zero(), ConvexSpec::zero(1), ObliqueField::identity(1), 0.1);
    let s = solve_penalized(&p, &Backend::Lattice).unwrap();
    let lattice = build_lattice(p.grid);
    let mut worst = 0.0f64;
    for k in 0..=n {
        for (j, b) in lattice.brownian_values(k).iter().enumerate() {
            worst = worst.max((s.y_at(k, j)[0] - b).abs());
            worst = worst.max(s.u_at(k, j)[0].abs());
            if k < n {
                worst = worst.max((s.z_at(k, j)[0] - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-12, format!("max deviation from (B, 1, 0) = {worst:.1e}"))
}

/// Exhaustive backward induction over all 2^n paths of the non-recombining
/// tree; each node solves y + (dt/ε)·min(y, 0) = R by bisection.
fn tree_oracle(n: usize, eps: f64) -> f64 {
    let dt = 1.0 / n as f64;
    let sq = dt.sqrt();
    fn node(depth: usize, n: usize, b: f64, sq: f64, dt: f64, eps: f64) -> f64 {
        if depth == n {
            return b;
        }
        let up = node(depth + 1, n, b + sq, sq, dt, eps);
        let down = node(depth + 1, n, b - sq, sq, dt, eps);
        let r = 0.5 * (up + down);
        let g = |y: f64| y + dt / eps * y.min(0.0) - r;
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
    node(0, n, 0.0, sq, dt, eps)
}

fn penalization_oracle() -> Check {
    let p = problem(8, "x", Driver::zero(), ConvexSpec::nonneg_half_line(), ObliqueField::identity(1), 0.1);
    let y0 = solve_penalized(&p, &Backend::Lattice).unwrap().y0()[0];
    let oracle = tree_oracle(8, 0.1);
    let err = (y0 - oracle).abs();
    ensure(err <= 1e-8, format!("Y0 = {y0:.12}, tree oracle = {oracle:.12}, error {err:.1e}"))
}

const LADDER: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn energy_uniformity() -> Check {
    let sweep = apriori_sweep(&indicator_problem(ObliqueField::identity(1), 0.2), &LADDER).unwrap();
    ensure(
        sweep.energy_spread < 2.0,
        format!("E∫(|U|²+|Z|²) = {:?}, spread {:.3}", sweep.energy_uz, sweep.energy_spread),
    )
}

fn gap_slope() -> Check {
    let g = yosida_gap_slope(&indicator_problem(ObliqueField::identity(1), 0.2), &LADDER).unwrap();
    let slope = g.slope.ok_or("slope undefined")?;
    let q = problem(16, "x", Driver::zero(), ConvexSpec::half_squared_norm(1), ObliqueField::identity(1), 0.1);
    let analytic = yosida_gap_slope(&q, &LADDER).unwrap().analytic_slope.ok_or("no analytic slope")?;
    ensure(
        slope >= MIN_GAP_SLOPE && (analytic - 2.0).abs() <= 1e-6,
        format!("indicator slope {slope:.4}, quadratic analytic slope {analytic:.9}"),
    )
}

fn time_field() -> ObliqueField {
    ObliqueField::diagonal(
        &["1 + t"],
        FieldConstants {
            a: 1.0,
            b: 2.0,
            lambda: 0.0,
        },
    )
    .unwrap()
}

fn cauchy() -> Check {
    let c = cauchy_study(&indicator_problem(time_field(), 0.2), &LADDER).unwrap();
    let ratios: Vec<f64> = c.pairs.iter().map(|p| p.ratio).collect();
    let within = ratios
        .iter()
        .all(|r| *r <= 2.0 * c.fitted_constant && *r >= 0.5 * c.fitted_constant);
    ensure(
        c.monotone && within,
        format!(
            "distances {:?}, ratios {ratios:?}, fitted constant {:.4e}",
            c.pairs.iter().map(|p| p.distance).collect::<Vec<_>>(),
            c.fitted_constant
        ),
    )
}

fn cone_invariance() -> Check {
    let run = |c: f64| {
        let p = problem(
            16,
            "x",
            Driver::zero(),
            ConvexSpec::nonneg_half_line(),
            ObliqueField::scalar(1, c).unwrap(),
            0.1,
        );
        solve_penalized(&p, &Backend::Lattice).unwrap()
    };
    let diff = sup_difference(&run(1.0).y, &run(3.0).y);
    ensure(diff <= 1e-8, format!("sup |Y(c=1) - Y(c=3)| = {diff:.3e} at eps = 0.1"))
}

fn conditional_variation_checks() -> Check {
    let lattice = build_lattice(TimeGrid::new(0.0, 1.0, 16).unwrap());
    let b: Vec<Vec<f64>> = (0..=16).map(|k| lattice.brownian_values(k)).collect();
    let cv_b = conditional_variation(&b, 1, &lattice).unwrap();
    let sq: Vec<Vec<f64>> = (0..=16).map(|k| vec![(k as f64 / 16.0).powi(2); k + 1]).collect();
    let cv_sq = conditional_variation(&sq, 1, &lattice).unwrap();
    let cv = |eps| {
        let s = solve_penalized(&indicator_problem(ObliqueField::identity(1), eps), &Backend::Lattice).unwrap();
        conditional_variation(&s.y, 1, s.lattice().unwrap()).unwrap()
    };
    let (a, c) = (cv(0.1), cv(0.05));
    ensure(
        cv_b == 0.0 && cv_sq == 1.0 && a.is_finite() && c.is_finite() && a.max(c) <= 2.0 * a.min(c),
        format!("CV(B) = {cv_b}, CV(t²) = {cv_sq}, CV(Y) = {a:.4} / {c:.4} at eps 0.1 / 0.05"),
    )
}

fn feynman_kac() -> Check {
    let mut worst = 0.0f64;
    for (terminal, driver) in [
        ("x", Driver::zero()),
        ("1", Driver::linear(-1.0, 0.0, 0.0, vec![0.0])),
    ] {
        let p = problem(128, terminal, driver, ConvexSpec::zero(1), ObliqueField::identity(1), 0.1);
        let s = solve_pde_penalized(&p, &PdeGrid::new(1.0, 128, -4.0, 4.0, 64).unwrap()).unwrap();
        for r in compare_feynman_kac(&s, &p, &[(0.0, 0.0), (0.5, 0.0), (0.5, 1.0)], &Backend::Lattice).unwrap() {
            worst = worst.max(r.error);
        }
    }
    let c = problem(64, "x", Driver::zero(), ConvexSpec::nonneg_half_line(), ObliqueField::identity(1), 0.05);
    let probes = feynman_kac_study(
        &c,
        &PdeGrid::centered(0.0, 1.0, 64, 128).unwrap(),
        &[(0.0, 0.0), (0.0, 1.0), (0.0, -1.0)],
    )
    .unwrap();
    let summary: Vec<String> = probes
        .iter()
        .map(|p| format!("x={}: {:.1e} <= {:.1e}", p.x, p.error, p.budget))
        .collect();
    ensure(
        worst <= 5e-3 && probes.iter().all(|p| p.passed),
        format!("closed-form max error {worst:.1e}; constrained {}", summary.join(", ")),
    )
}

fn lagged() -> Check {
    let tanh_field = || {
        ObliqueField::diagonal(
            &["2 + tanh(y)"],
            FieldConstants {
                a: 1.0,
                b: 3.0,
                lambda: 1.0,
            },
        )
        .unwrap()
    };
    let constant = problem(
        16,
        "x",
        Driver::zero(),
        ConvexSpec::nonneg_half_line(),
        ObliqueField::scalar(1, 2.0).unwrap(),
        0.05,
    );
    let d_const = sup_difference(
        &solve_penalized(&constant, &Backend::Lattice).unwrap().y,
        &solve_lagged_h(&constant, LaggedOptions::new(4)).unwrap().solution.y,
    );
    let free = problem(
        16,
        "x",
        Driver::linear(-0.5, 0.0, 0.0, vec![0.3]),
        ConvexSpec::zero(1),
        tanh_field(),
        0.05,
    );
    let d_free = sup_difference(
        &solve_penalized(&free, &Backend::Lattice).unwrap().y,
        &solve_lagged_h(&free, LaggedOptions::new(4)).unwrap().solution.y,
    );
    let active = problem(16, "x", Driver::zero(), ConvexSpec::nonneg_half_line(), tanh_field(), 0.05);
    let run = solve_lagged_h(&active, LaggedOptions::new(4)).map_err(|e| e.to_string())?;
    let gap = sup_difference(&solve_penalized(&active, &Backend::Lattice).unwrap().y, &run.solution.y);
    ensure(
        d_const <= 1e-12 && d_free <= 1e-12 && run.sweeps <= 20 && gap <= 5.0 * 0.05,
        format!(
            "constant H diff {d_const:.1e}, phi=0 diff {d_free:.1e}, tanh field: {} sweeps, gap to direct {gap:.4}",
            run.sweeps
        ),
    )
}

/// Report and every table of a run directory, keyed by relative path.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = vec![("report.json".to_string(), fs::read(dir.join("report.json")).unwrap())];
    let mut tables: Vec<_> = fs::read_dir(dir.join("tables")).unwrap().map(|e| e.unwrap().path()).collect();
    tables.sort();
    for t in tables {
        files.push((t.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&t).unwrap()));
    }
    files
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let mut names: Vec<String> = fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut compared = 0;
    for name in &names {
        let config = configs_dir().join(name);
        let mut runs = Vec::new();
        for (i, threads) in [1, 4, 4].into_iter().enumerate() {
            let out = tmp.path().join(format!("{name}-{i}"));
            let code = run_command(&config, &out, None, Some(threads));
            if code != 0 {
                return Err(format!("{name}: exit {code}"));
            }
            runs.push(artifacts(&out));
        }
        for r in &runs[1..] {
            if *r != runs[0] {
                return Err(format!("{name}: artifacts differ between runs"));
            }
        }
        compared += runs[0].len();
    }
    Ok(format!("{} configs x 3 runs (threads 1, 4, 4), {compared} artifacts byte-identical", names.len()))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("Yosida suite", Some(5.0), yosida_suite),
        ("Lipschitz BSDE degeneracy", Some(5.0), lipschitz_degeneracy),
        ("martingale exactness", Some(1.0), martingale_exactness),
        ("penalization tree oracle", None, penalization_oracle),
        ("uniform energy bound", Some(30.0), energy_uniformity),
        ("Yosida gap slope", None, gap_slope),
        ("Cauchy study", None, cauchy),
        ("d=1 cone invariance", None, cone_invariance),
        ("conditional variation", None, conditional_variation_checks),
        ("Feynman-Kac cross-check", Some(60.0), feynman_kac),
        ("lagged-H scheme", None, lagged),
        ("determinism", None, determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".to_string()))
        });
        let secs = start.elapsed().as_secs_f64();
        let result = match (result, limit) {
            (Ok(d), Some(l)) if secs >= *l => Err(format!("{d}; took {secs:.2} s, limit {l} s")),
            (r, _) => r,
        };
        let (verdict, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {:>2} {verdict} {name} [{secs:.2} s]: {detail}", i + 1);
        if result.is_err() {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 12 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
