use std::process::ExitCode;

fn main() -> ExitCode {
    nlsescat::cli::run(std::env::args_os())
}
