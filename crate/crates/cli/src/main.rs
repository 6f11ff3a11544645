fn main() {
    std::process::exit(cgnmt_cli::run_command(std::env::args_os()));
}
