fn main() {
    std::process::exit(hmle::cli::run(std::env::args_os()));
}
