fn main() {
    std::process::exit(integro_core::cli::run(std::env::args_os()));
}
