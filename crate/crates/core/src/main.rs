fn main() {
    std::process::exit(licas::cli::run(std::env::args_os()));
}
