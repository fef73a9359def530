fn main() {
    std::process::exit(privheavy::cli::run(std::env::args_os()));
}
