fn main() {
    std::process::exit(ot_orch::cli::main_with_args(std::env::args_os()));
}
