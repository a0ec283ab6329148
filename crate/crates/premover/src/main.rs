fn main() {
    std::process::exit(premover::cli::run(std::env::args_os()));
}
