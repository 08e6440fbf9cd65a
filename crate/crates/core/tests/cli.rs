use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bsvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsvi")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    bsvi(&args)
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn metric(report: &serde_json::Value, name: &str) -> f64 {
    report["diagnostics"]["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["name"] == name)
        .unwrap_or_else(|| panic!("no metric {name}"))["value"]
        .as_f64()
        .unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn yosida_suite_passes_with_full_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&config("yosida_suite.toml"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(tmp.path());
    assert_eq!(r["passed"], true);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(r["toolkit_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["defaults"]["max_iterations"], 200);
    assert_eq!(r["diagnostics"]["metrics"].as_array().unwrap().len(), 12);
    assert!(tmp.path().join("tables/yosida.csv").exists());
    assert!(!fs::read_to_string(tmp.path().join("log.txt")).unwrap().is_empty());
}

#[test]
fn martingale_solution_table_holds_brownian_values() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&config("martingale.toml"), tmp.path(), &[]).status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("tables/solution.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let y = header.iter().position(|h| *h == "y1").unwrap();
    let sqrt_dt = (1.0f64 / 16.0).sqrt();
    for row in rows(&csv) {
        let (k, j): (f64, f64) = (row[0].parse().unwrap(), row[1].parse().unwrap());
        let value: f64 = row[y].parse().unwrap();
        assert!((value - (2.0 * j - k) * sqrt_dt).abs() <= 1e-12);
    }
}

#[test]
fn gap_slope_table_has_one_row_per_epsilon() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&config("gap_slope.toml"), tmp.path(), &[]).status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("tables/gap.csv")).unwrap();
    assert_eq!(rows(&csv).len(), 4);
    assert!(metric(&report(tmp.path()), "slope") >= 1.7);
}

#[test]
fn invalid_config_exits_64_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "kind = \"bsvi-solve\"\n\n[problem]\nsteps = 4\nepsilon = 0.1\nterminal = [\"x\"]\ncolour = 1\n");
    let o = run(path.to_str().unwrap(), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(64));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("line 7"), "{stderr}");
}

#[test]
fn failed_check_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("exp_decay.toml"))
        .unwrap()
        .replace("steps = 128", "steps = 4")
        .replace("5e-3", "1e-3");
    let path = write_config(tmp.path(), &text);
    let o = run(path.to_str().unwrap(), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(report(&tmp.path().join("out"))["passed"], false);
}

#[test]
fn runtime_error_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("lagged_h.toml")).unwrap().replace("partition = 4", "partition = 5");
    let path = write_config(tmp.path(), &text);
    let o = run(path.to_str().unwrap(), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("partition"));
    assert_eq!(run("/nonexistent.toml", &tmp.path().join("x"), &[]).status.code(), Some(1));
}

#[test]
fn seed_override_is_recorded_and_changes_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&config("ensemble_decay.toml"), &a, &[]).status.code(), Some(0));
    assert_eq!(run(&config("ensemble_decay.toml"), &b, &["--seed", "8"]).status.code(), Some(0));
    assert_eq!(report(&a)["seed"], 7);
    assert_eq!(report(&b)["seed"], 8);
    assert_ne!(
        fs::read(a.join("tables/solution.csv")).unwrap(),
        fs::read(b.join("tables/solution.csv")).unwrap()
    );
}

fn sweep(config: &str, key: &str, values: &str, out: &Path, code: i32) -> String {
    let o = bsvi(&["sweep", "--config", config, "--key", key, "--values", values, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(code), "{}", String::from_utf8_lossy(&o.stderr));
    fs::read_to_string(out.join("convergence.csv")).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let i = csv.lines().next().unwrap().split(',').position(|h| h == name).unwrap();
    rows(csv).into_iter().map(|r| r[i].clone()).collect()
}

#[test]
fn step_sweep_error_decreases() {
    let tmp = tempfile::tempdir().unwrap();
    // coarse grids miss the 5e-3 check, so the sweep reports a failed check
    let csv = sweep(&config("exp_decay.toml"), "problem.steps", "16,32,64", tmp.path(), 2);
    assert_eq!(column(&csv, "problem.steps"), ["16", "32", "64"]);
    let err: Vec<f64> = column(&csv, "y0_error").iter().map(|v| v.parse().unwrap()).collect();
    assert!(err[0] > err[1] && err[1] > err[2], "{err:?}");
}

#[test]
fn epsilon_sweep_reproduces_gap_slope_values() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = sweep(&config("half_line.toml"), "problem.epsilon", "0.2,0.1,0.05,0.025", &tmp.path().join("s"), 0);
    let out = tmp.path().join("g");
    assert_eq!(run(&config("gap_slope.toml"), &out, &[]).status.code(), Some(0));
    let gap_csv = fs::read_to_string(out.join("tables/gap.csv")).unwrap();
    let expected: Vec<String> = rows(&gap_csv).into_iter().map(|r| r[1].clone()).collect();
    assert_eq!(column(&csv, "gap"), expected);
}

#[test]
fn lag_sweep_gives_sensitivity_table() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = sweep(&config("lagged_h.toml"), "lagged.lag", "1,2,3", tmp.path(), 0);
    assert_eq!(rows(&csv).len(), 3);
    assert_eq!(column(&csv, "lagged.lag"), ["1", "2", "3"]);
    assert!(tmp.path().join("runs/002/report.json").exists());
}

#[test]
fn sweep_over_unknown_key_is_invalid_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bsvi(&[
        "sweep",
        "--config",
        &config("martingale.toml"),
        "--key",
        "problem.stepz",
        "--values",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn usage_errors_exit_64_and_pass_prints_summary() {
    assert_eq!(bsvi(&["run", "--config"]).status.code(), Some(64));
    assert_eq!(bsvi(&["--version"]).status.code(), Some(0));
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&config("martingale.toml"), tmp.path(), &["--threads", "2"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "pass");
}
