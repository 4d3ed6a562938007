fn main() {
    std::process::exit(diagflow::cli::run(std::env::args_os()));
}
