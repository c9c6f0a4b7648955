fn main() {
    std::process::exit(meshloop_cli::run(std::env::args_os().collect()));
}
