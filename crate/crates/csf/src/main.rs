fn main() {
    std::process::exit(csf::cli::main());
}
