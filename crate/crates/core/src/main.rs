fn main() {
    std::process::exit(panda::cli::main_with_args(std::env::args_os()));
}
