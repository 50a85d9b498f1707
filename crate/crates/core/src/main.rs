fn main() -> std::process::ExitCode {
    splatstyle_core::cli::main()
}
