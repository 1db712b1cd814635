fn main() {
    std::process::exit(explicit_trust::cli::run_from_env());
}
