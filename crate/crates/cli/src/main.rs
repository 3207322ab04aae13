fn main() {
    std::process::exit(nestclust_cli::run(std::env::args_os()));
}
