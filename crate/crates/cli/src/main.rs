fn main() {
    std::process::exit(kgcn_cli::run(std::env::args_os()));
}
