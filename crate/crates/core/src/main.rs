fn main() {
    std::process::exit(chf_hybrid::cli::main());
}
