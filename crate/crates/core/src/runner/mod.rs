//! Config-driven experiment runner behind the `bsvi` binary.

mod cli;
mod config;
mod run;
mod sweep;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub use cli::main_with_args;
pub use config::{
    BackendConfig, BuiltinConvex, ChecksConfig, ConvexConfig, DriverConfig, ExperimentConfig, ExperimentKind,
    FieldConfig, ForwardConfig, LaggedConfig, PdeConfig, ProblemConfig, YosidaConfig,
};
pub use run::{config_hash, execute, write_outputs, NumericDefaults, RunOutput, RunReport, MAX_CV_RATIO};
pub use sweep::{apply_override, convergence_table};

use crate::error::BsviError;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED_CHECK: i32 = 2;
pub const EXIT_INVALID_CONFIG: i32 = 64;

/// Timestamped log; the only output that carries wall-clock time.
struct Log {
    file: Option<fs::File>,
}

impl Log {
    fn open(out: &Path) -> Self {
        let file = fs::create_dir_all(out)
            .and_then(|_| fs::File::create(out.join("log.txt")))
            .ok();
        Self { file }
    }

    fn line(&mut self, msg: &str) {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "[{now:.3}] {msg}");
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, String> {
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| e.to_string()),
    }
}

fn read_config(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn exit_code(passed: bool) -> i32 {
    if passed {
        EXIT_PASS
    } else {
        EXIT_FAILED_CHECK
    }
}

fn report_error(log: &mut Log, e: &BsviError) -> i32 {
    let msg = format!("error: {e}");
    eprintln!("{msg}");
    log.line(&msg);
    EXIT_ERROR
}

/// `bsvi run`: returns the process exit code.
pub fn run_command(config_path: &Path, out: &Path, seed: Option<u64>, threads: Option<usize>) -> i32 {
    let mut log = Log::open(out);
    let raw = match read_config(config_path) {
        Ok(r) => r,
        Err(msg) => {
            eprintln!("error: {msg}");
            log.line(&msg);
            return EXIT_ERROR;
        }
    };
    let mut config = match ExperimentConfig::parse(&raw) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("invalid config {}: {msg}", config_path.display());
            log.line(&format!("invalid config: {msg}"));
            return EXIT_INVALID_CONFIG;
        }
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    log.line(&format!(
        "run {} (kind {}, seed {}, threads {})",
        config_path.display(),
        config.kind.name(),
        config.seed,
        threads.map_or("default".to_string(), |n| n.to_string())
    ));
    let hash = config_hash(&raw);
    let result = match with_threads(threads, || execute(&config, &hash)) {
        Ok(r) => r,
        Err(msg) => {
            eprintln!("error: thread pool: {msg}");
            return EXIT_ERROR;
        }
    };
    let output = match result {
        Ok(o) => o,
        Err(e) => return report_error(&mut log, &e),
    };
    if let Err(e) = write_outputs(out, &output) {
        eprintln!("error: writing outputs: {e}");
        return EXIT_ERROR;
    }
    for m in &output.report.diagnostics.metrics {
        log.line(&format!("{} = {} ({:?})", m.name, m.value, m.status));
    }
    log.line(&format!("passed = {}", output.report.passed));
    exit_code(output.report.passed)
}

/// `bsvi sweep`: runs the configuration once per value of `key` and merges
/// the metrics into `convergence.csv`.
pub fn sweep_command(config_path: &Path, key: &str, values: &[String], out: &Path, threads: Option<usize>) -> i32 {
    let mut log = Log::open(out);
    let raw = match read_config(config_path) {
        Ok(r) => r,
        Err(msg) => {
            eprintln!("error: {msg}");
            log.line(&msg);
            return EXIT_ERROR;
        }
    };
    if let Err(msg) = ExperimentConfig::parse(&raw) {
        eprintln!("invalid config {}: {msg}", config_path.display());
        log.line(&format!("invalid config: {msg}"));
        return EXIT_INVALID_CONFIG;
    }
    let table: toml::Table = raw.parse().expect("parsed above");
    let mut runs = Vec::new();
    for (i, value) in values.iter().enumerate() {
        let mut t = table.clone();
        let config = match apply_override(&mut t, key, value).and_then(|_| {
            let text = toml::to_string(&t).map_err(|e| BsviError::invalid(e.to_string()))?;
            ExperimentConfig::parse(&text).map_err(BsviError::InvalidArgument)
        }) {
            Ok(c) => c,
            Err(e) => {
                let msg = format!("--key {key} = {value}: {e}");
                eprintln!("invalid config {}: {msg}", config_path.display());
                log.line(&msg);
                return EXIT_INVALID_CONFIG;
            }
        };
        let text = toml::to_string(&t).expect("table serializes");
        let hash = config_hash(&text);
        log.line(&format!("sweep {key} = {value}"));
        let output = match with_threads(threads, || execute(&config, &hash)) {
            Ok(Ok(o)) => o,
            Ok(Err(e)) => return report_error(&mut log, &e),
            Err(msg) => {
                eprintln!("error: thread pool: {msg}");
                return EXIT_ERROR;
            }
        };
        let dir = out.join("runs").join(format!("{i:03}"));
        if let Err(e) = write_outputs(&dir, &output) {
            eprintln!("error: writing outputs: {e}");
            return EXIT_ERROR;
        }
        runs.push((config, output.report.diagnostics));
    }
    let csv = match convergence_table(&runs, key) {
        Ok(c) => c,
        Err(e) => return report_error(&mut log, &e),
    };
    if let Err(e) = fs::write(out.join("convergence.csv"), csv) {
        eprintln!("error: writing convergence table: {e}");
        return EXIT_ERROR;
    }
    let passed = runs.iter().all(|(_, r)| r.all_passed());
    log.line(&format!("passed = {passed}"));
    exit_code(passed)
}
