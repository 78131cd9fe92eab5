fn main() {
    std::process::exit(dpocov::cli::main_with_args(std::env::args_os()));
}
