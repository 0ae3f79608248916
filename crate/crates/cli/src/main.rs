fn main() {
    std::process::exit(poisonlab_cli::run_cli(std::env::args_os()));
}
