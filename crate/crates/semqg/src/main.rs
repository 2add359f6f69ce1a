fn main() {
    std::process::exit(semqg::cli::main());
}
