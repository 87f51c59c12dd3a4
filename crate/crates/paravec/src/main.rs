use std::process::ExitCode;

fn main() -> ExitCode {
    paravec::tools::cli_dispatch(std::env::args())
}
