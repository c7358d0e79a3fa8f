fn main() {
    std::process::exit(v2x_sched::cli::main_with_args(std::env::args_os()));
}
