fn main() {
    std::process::exit(cxr_cli::run(std::env::args_os()));
}
