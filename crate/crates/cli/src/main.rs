fn main() {
    std::process::exit(implied_corr_cli::app::run(std::env::args_os()));
}
