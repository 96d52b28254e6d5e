fn main() {
    std::process::exit(oplas_cli::run(std::env::args_os()));
}
