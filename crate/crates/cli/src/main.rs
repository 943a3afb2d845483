fn main() {
    std::process::exit(mhect_cli::cli::main_with_args(std::env::args_os()));
}
