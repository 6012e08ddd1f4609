fn main() {
    std::process::exit(cogwalk_cli::run(std::env::args_os()));
}
