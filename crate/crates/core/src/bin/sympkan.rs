fn main() {
    std::process::exit(sympkan::cli::run(std::env::args_os()));
}
