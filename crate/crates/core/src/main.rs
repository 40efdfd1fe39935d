fn main() {
    std::process::exit(skillmix::cli::run());
}
