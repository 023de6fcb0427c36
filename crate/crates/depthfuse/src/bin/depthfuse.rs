fn main() {
    std::process::exit(depthfuse::cli::run(std::env::args_os()));
}
