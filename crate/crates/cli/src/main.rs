fn main() {
    std::process::exit(rtn_cli::main_with_args(std::env::args_os()));
}
