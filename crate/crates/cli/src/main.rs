use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(fls_cli::run(std::env::args_os()))
}
