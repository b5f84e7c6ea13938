fn main() {
    std::process::exit(probe_audit::cli::run());
}
