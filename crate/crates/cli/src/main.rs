fn main() {
    std::process::exit(rae_cli::run(std::env::args_os()));
}
