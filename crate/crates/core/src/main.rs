fn main() {
    std::process::exit(mvp_cbm::cli::run(std::env::args_os()));
}
