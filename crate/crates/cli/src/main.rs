use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(notif_ltv_cli::run(std::env::args_os()))
}
