fn main() {
    std::process::exit(pnes_capacity::cli::run(std::env::args_os()));
}
