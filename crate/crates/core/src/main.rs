fn main() {
    std::process::exit(fusedec::harness::cli::cli_main(std::env::args_os()));
}
