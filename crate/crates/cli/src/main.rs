use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(hcsim_cli::app::run_from(std::env::args_os()))
}
