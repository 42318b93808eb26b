fn main() -> std::process::ExitCode {
    nullfreq::cli::main_with_args(std::env::args_os())
}
