fn main() {
    std::process::exit(koopman_core::cli::main_with_args(std::env::args_os()));
}
