use std::process::ExitCode;

fn main() -> ExitCode {
    prefshap_cli::main_entry()
}
