use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::{run_command, sweep_command, EXIT_FAILED_CHECK, EXIT_INVALID_CONFIG, EXIT_PASS};

#[derive(Parser)]
#[command(name = "bsvi", version, about = "Penalized BSVI solvers and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Repeat an experiment over values of one dotted config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        key: String,
        /// Comma-separated values, each read as a TOML literal.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Entry point of the `bsvi` binary; returns the exit code. Usage errors
/// print clap's message and exit 64 (help and version exit 0).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID_CONFIG } else { EXIT_PASS };
        }
    };
    let code = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => run_command(&config, &out, seed, threads),
        Command::Sweep {
            config,
            key,
            values,
            out,
            threads,
        } => sweep_command(&config, &key, &values, &out, threads),
    };
    match code {
        EXIT_PASS => println!("pass"),
        EXIT_FAILED_CHECK => println!("FAIL: a check failed, see report.json"),
        _ => {}
    }
    code
}
