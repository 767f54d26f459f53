fn main() {
    std::process::exit(sapphire_fwm::cli::run(std::env::args_os()));
}
