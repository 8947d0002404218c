fn main() {
    std::process::exit(cmdnst::cli::main_with_args(std::env::args_os()));
}
