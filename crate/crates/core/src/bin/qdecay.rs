use std::process::ExitCode;

fn main() -> ExitCode {
    qdecay::cli::main_with(std::env::args_os())
}
