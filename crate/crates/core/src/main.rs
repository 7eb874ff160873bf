fn main() {
    std::process::exit(wogma::cli::main());
}
