fn main() {
    std::process::exit(anat9::cli::run(std::env::args_os()));
}
