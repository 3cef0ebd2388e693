fn main() {
    std::process::exit(burgers_lab::harness::cli::run_cli(std::env::args_os()));
}
