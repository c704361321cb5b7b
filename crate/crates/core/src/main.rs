fn main() {
    std::process::exit(multidag::cli::run(std::env::args_os()));
}
