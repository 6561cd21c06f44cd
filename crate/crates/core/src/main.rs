fn main() -> std::process::ExitCode {
    noisecal::cli::main()
}
