fn main() {
    std::process::exit(comet::cli::main_with_args(std::env::args_os()));
}
