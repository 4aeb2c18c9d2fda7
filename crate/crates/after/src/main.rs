fn main() -> std::process::ExitCode {
    after::cli::main()
}
