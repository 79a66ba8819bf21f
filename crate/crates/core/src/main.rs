fn main() {
    std::process::exit(linrep::cli::run(std::env::args_os()));
}
