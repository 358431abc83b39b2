fn main() {
    std::process::exit(schro::cli::run(std::env::args_os()));
}
