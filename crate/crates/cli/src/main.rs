fn main() {
    std::process::exit(selfmap_cli::run(std::env::args_os()));
}
