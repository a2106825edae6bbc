fn main() {
    icpe_cli::init_logging();
    std::process::exit(icpe_cli::run(std::env::args_os()));
}
