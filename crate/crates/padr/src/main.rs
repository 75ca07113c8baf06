fn main() {
    std::process::exit(padr::cli::main_with_args(std::env::args_os()));
}
