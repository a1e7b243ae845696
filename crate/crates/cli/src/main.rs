use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(semcommit::run(std::env::args_os()))
}
