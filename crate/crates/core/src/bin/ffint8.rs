fn main() {
    std::process::exit(ffint8::cli::main_with_args(std::env::args_os()));
}
