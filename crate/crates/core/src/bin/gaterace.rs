fn main() {
    std::process::exit(gaterace::evalharness::cli::main(std::env::args_os()));
}
