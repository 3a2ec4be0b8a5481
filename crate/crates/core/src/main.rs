fn main() {
    std::process::exit(abacus_sim::cli::run_cli());
}
