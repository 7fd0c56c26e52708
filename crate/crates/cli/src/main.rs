fn main() {
    std::process::exit(fragto_cli::run(std::env::args_os()));
}
