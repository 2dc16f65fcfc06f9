fn main() {
    std::process::exit(fraglayer::cli::main_with_args(std::env::args_os()));
}
