fn main() {
    std::process::exit(pepsvqe_cli::run(std::env::args_os()));
}
