fn main() {
    std::process::exit(fisheye_convert::cli::cli_main(std::env::args_os()));
}
