fn main() {
    std::process::exit(floorspace::cli::main_with_args(std::env::args_os()));
}
