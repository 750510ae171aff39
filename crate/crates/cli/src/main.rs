fn main() {
    std::process::exit(dmia_cli::cli_main(std::env::args_os()));
}
