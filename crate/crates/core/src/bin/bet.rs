fn main() {
    std::process::exit(bet::cli::run());
}
