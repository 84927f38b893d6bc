fn main() {
    std::process::exit(subcart::cli::main_with_args(std::env::args_os()));
}
