fn main() {
    std::process::exit(fgmdm_cli::run(std::env::args_os()));
}
