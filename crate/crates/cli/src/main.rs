fn main() -> std::process::ExitCode {
    hvg_cli::main_with(std::env::args_os())
}
