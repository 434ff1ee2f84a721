use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(twostream::cli::cmd_run(std::env::args_os()) as u8)
}
