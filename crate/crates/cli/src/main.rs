fn main() {
    std::process::exit(gci_cli::run(std::env::args_os()));
}
