fn main() {
    std::process::exit(splatsim_cli::run(std::env::args_os()));
}
