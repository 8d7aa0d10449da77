fn main() {
    std::process::exit(nnose::cli::main_with_args(std::env::args_os()));
}
