fn main() {
    std::process::exit(transpath_cli::run(std::env::args_os()));
}
