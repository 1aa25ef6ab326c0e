fn main() {
    std::process::exit(strn::cli::run(std::env::args_os()));
}
