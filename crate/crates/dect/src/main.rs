fn main() {
    std::process::exit(dect::cli::run(std::env::args_os()));
}
