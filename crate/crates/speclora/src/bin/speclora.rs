fn main() {
    std::process::exit(speclora::cli::main_from_env());
}
