fn main() {
    std::process::exit(wgtrack::cli::main_with_args(std::env::args_os()));
}
