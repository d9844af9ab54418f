fn main() {
    std::process::exit(dip_core::cli::main_with_args(std::env::args()));
}
