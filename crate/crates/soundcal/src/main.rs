fn main() {
    std::process::exit(soundcal::cli::run());
}
