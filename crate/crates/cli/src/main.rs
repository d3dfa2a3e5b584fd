use std::process::ExitCode;

fn main() -> ExitCode {
    match std::panic::catch_unwind(|| airshadow_cli::run(std::env::args_os())) {
        Ok(code) => ExitCode::from(code),
        Err(_) => ExitCode::from(3),
    }
}
