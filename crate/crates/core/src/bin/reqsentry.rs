fn main() {
    std::process::exit(reqsentry::engine::cli::run_cli(std::env::args_os()));
}
