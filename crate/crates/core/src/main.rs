fn main() {
    std::process::exit(centerpolar::cli::main());
}
