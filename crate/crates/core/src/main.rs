fn main() {
    std::process::exit(evs::cli::run(std::env::args_os()));
}
