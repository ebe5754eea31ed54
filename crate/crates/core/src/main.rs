fn main() {
    std::process::exit(pnstage::cli::main());
}
