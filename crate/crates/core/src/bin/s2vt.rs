fn main() {
    std::process::exit(s2vt_core::cli::run(std::env::args_os()));
}
