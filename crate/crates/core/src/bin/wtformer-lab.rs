use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(wtformer_lab::cli::run(std::env::args_os()))
}
