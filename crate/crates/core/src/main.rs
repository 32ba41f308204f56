fn main() {
    std::process::exit(mobile_spin::cli::main_with_args(std::env::args_os()));
}
