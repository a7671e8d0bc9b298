fn main() {
    std::process::exit(bagwise::pipeline::cli::main());
}
