fn main() {
    std::process::exit(nonholo_es_cli::main_with_args(std::env::args_os()));
}
