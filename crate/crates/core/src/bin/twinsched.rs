fn main() {
    std::process::exit(twinsched::harness::cli::run_cli(std::env::args_os()));
}
