fn main() -> std::process::ExitCode {
    sas::cli::main()
}
