fn main() {
    std::process::exit(wsvad::cli::run(std::env::args_os()));
}
