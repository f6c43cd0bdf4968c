fn main() {
    std::process::exit(spellbee::cli::main(std::env::args_os()));
}
