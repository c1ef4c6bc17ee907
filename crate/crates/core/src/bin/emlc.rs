fn main() {
    std::process::exit(emlc::harness::run_cli(std::env::args_os()));
}
