fn main() {
    std::process::exit(r2d_cli::run(std::env::args_os()));
}
