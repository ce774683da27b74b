fn main() {
    std::process::exit(densescan::cli::run(std::env::args_os()));
}
