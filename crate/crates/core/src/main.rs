fn main() {
    std::process::exit(hrf::cli::run(std::env::args_os()));
}
