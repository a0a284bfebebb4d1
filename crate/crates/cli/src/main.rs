fn main() {
    std::process::exit(robustvi_cli::main_with_args(std::env::args_os()));
}
