fn main() {
    std::process::exit(lusphase::cli::run());
}
