fn main() {
    std::process::exit(qsme::cli::main_with(std::env::args_os()));
}
