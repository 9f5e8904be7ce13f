fn main() {
    std::process::exit(confgate::cli::main_with(std::env::args_os()));
}
