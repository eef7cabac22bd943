fn main() {
    std::process::exit(glode::cli::main_with_args(std::env::args_os()));
}
