fn main() {
    std::process::exit(viking_harness::cli::cli_main(std::env::args_os()));
}
