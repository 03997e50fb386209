fn main() {
    env_logger::init();
    std::process::exit(optbounds::cli::run());
}
