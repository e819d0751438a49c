fn main() {
    std::process::exit(rtdisc::cli::main_with_args(std::env::args_os()));
}
