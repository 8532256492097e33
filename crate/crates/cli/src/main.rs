use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ftls_harness::run(std::env::args_os(), &mut io::stdout(), &mut io::stderr()))
}
