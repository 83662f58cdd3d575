fn main() {
    std::process::exit(tnp_core::cli::cli_dispatch(std::env::args_os()));
}
