fn main() {
    std::process::exit(weakrank::cli::run(std::env::args_os()));
}
