fn main() -> std::process::ExitCode {
    lpl::cli::main_entry()
}
