fn main() {
    std::process::exit(veritas::cli::main_with_env());
}
