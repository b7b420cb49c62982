fn main() -> std::process::ExitCode {
    tse_core::cli::main()
}
