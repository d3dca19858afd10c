fn main() {
    std::process::exit(rtbench::cli::main(std::env::args_os()));
}
