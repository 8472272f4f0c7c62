use std::process::ExitCode;

fn main() -> ExitCode {
    edm_cli::main()
}
