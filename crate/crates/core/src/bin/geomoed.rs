fn main() {
    std::process::exit(geomoed::cli::main_from_args());
}
