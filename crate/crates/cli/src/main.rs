fn main() -> std::process::ExitCode {
    pagebench_cli::main_entry()
}
