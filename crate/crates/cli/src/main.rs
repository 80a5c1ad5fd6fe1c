fn main() {
    std::process::exit(landex_cli::run(std::env::args_os()));
}
