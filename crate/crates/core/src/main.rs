fn main() {
    std::process::exit(dvrsim::cli::run_cli(std::env::args_os()));
}
