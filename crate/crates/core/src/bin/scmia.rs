fn main() {
    std::process::exit(scmia::cli::main());
}
