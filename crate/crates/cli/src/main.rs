fn main() {
    std::process::exit(turnpike_cli::run(std::env::args_os()));
}
