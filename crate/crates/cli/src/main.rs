fn main() {
    std::process::exit(cxseg_cli::main_with_args(std::env::args_os()));
}
