use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(geobridge_cli::run(std::env::args_os()))
}
