fn main() {
    std::process::exit(occusense::cli::main_with_args(std::env::args_os()));
}
