fn main() {
    std::process::exit(deconvband::cli::main_with_args(std::env::args_os()));
}
