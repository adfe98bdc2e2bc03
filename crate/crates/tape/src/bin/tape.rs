fn main() {
    std::process::exit(tape::cli::run());
}
