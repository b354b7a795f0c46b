fn main() {
    std::process::exit(subgrad_sysid::cli::main_with_args(std::env::args_os()));
}
