fn main() {
    std::process::exit(spinenav::cli::main_with(std::env::args_os()));
}
