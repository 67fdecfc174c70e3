fn main() {
    std::process::exit(srlgrn::cli::run(std::env::args_os()));
}
