fn main() {
    std::process::exit(sfnn_cli::run(std::env::args_os()));
}
