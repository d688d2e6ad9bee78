fn main() {
    std::process::exit(diffjscc::cli::run(std::env::args_os()));
}
