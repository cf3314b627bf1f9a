fn main() {
    doa_lab::cli::configure_threads();
    std::process::exit(doa_lab::cli::run(std::env::args_os()));
}
