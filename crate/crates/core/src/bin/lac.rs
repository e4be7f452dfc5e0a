fn main() {
    std::process::exit(lac_align::cli::run(std::env::args_os()));
}
