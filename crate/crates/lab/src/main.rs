fn main() {
    std::process::exit(bellman_lab::run_cli(std::env::args_os()));
}
