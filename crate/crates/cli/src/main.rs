fn main() {
    std::process::exit(slice_infomin_cli::run(std::env::args_os()));
}
