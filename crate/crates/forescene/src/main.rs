fn main() {
    std::process::exit(forescene::run_cli());
}
