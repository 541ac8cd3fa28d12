use std::process::ExitCode;

fn main() -> ExitCode {
    ieopf::cli::main_entry()
}
