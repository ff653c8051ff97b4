fn main() {
    std::process::exit(binscat::cli::run());
}
