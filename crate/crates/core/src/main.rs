fn main() {
    std::process::exit(qcwave::cli::main_with_args(std::env::args_os()));
}
