fn main() {
    std::process::exit(patternnet::cli::run(std::env::args_os()));
}
