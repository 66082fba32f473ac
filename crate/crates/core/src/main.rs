fn main() {
    std::process::exit(fragnet::cli::main_with_args(std::env::args_os()));
}
