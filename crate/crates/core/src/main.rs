use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(vpcc::cli::run(std::env::args_os()) as u8)
}
