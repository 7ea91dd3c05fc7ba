use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(popstab::cli::run(std::env::args()) as u8)
}
