fn main() {
    std::process::exit(flowxpert::cli::run(std::env::args_os()));
}
