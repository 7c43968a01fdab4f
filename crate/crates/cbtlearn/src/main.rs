fn main() {
    std::process::exit(cbtlearn::cli::run());
}
