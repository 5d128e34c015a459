fn main() {
    std::process::exit(maxwell_ibvp::harness::run_cli(std::env::args_os()));
}
