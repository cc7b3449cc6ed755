fn main() -> std::process::ExitCode {
    flowsde::cli::main()
}
