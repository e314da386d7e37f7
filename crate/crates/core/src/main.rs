fn main() {
    std::process::exit(lowres_asr::cli::main());
}
