fn main() -> std::process::ExitCode {
    fmamba::cli::main()
}
