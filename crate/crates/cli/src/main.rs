fn main() {
    std::process::exit(bcm_cli::run(std::env::args_os()));
}
