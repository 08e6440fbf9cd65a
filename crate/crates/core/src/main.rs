use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(bsvi::runner::main_with_args(std::env::args_os()) as u8)
}
