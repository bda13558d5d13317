fn main() {
    std::process::exit(cgnet::cli::run(std::env::args_os()));
}
