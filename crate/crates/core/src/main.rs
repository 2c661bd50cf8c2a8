fn main() {
    std::process::exit(qnetsim_core::cli::run(std::env::args_os()));
}
