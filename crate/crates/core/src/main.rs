fn main() {
    std::process::exit(nibkit::cli::cli_main(std::env::args().collect()));
}
