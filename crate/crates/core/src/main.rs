fn main() {
    std::process::exit(gp_leapfrog::cli::main_from_args(std::env::args_os()));
}
