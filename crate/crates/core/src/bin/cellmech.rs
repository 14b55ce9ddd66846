fn main() {
    std::process::exit(cellmech::cli::run(std::env::args_os()));
}
