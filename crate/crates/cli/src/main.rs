fn main() {
    std::process::exit(profs_cli::run(std::env::args_os()));
}
