fn main() {
    std::process::exit(viser::experiment::cli::main());
}
