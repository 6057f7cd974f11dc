fn main() {
    std::process::exit(ssvaerr::cli::run(std::env::args_os()));
}
