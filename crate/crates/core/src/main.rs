fn main() {
    std::process::exit(moonfl::cli::main_with_args(std::env::args_os()));
}
