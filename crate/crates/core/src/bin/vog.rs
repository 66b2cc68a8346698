fn main() {
    std::process::exit(vogkit::cli::dispatch(std::env::args()));
}
