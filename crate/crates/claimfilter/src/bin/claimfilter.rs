use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(claimfilter::cli::run(std::env::args()) as u8)
}
