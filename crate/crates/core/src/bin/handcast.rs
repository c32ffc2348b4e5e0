fn main() {
    std::process::exit(handcast::cli::run());
}
