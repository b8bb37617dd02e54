fn main() {
    std::process::exit(mfsim_cli::run(std::env::args_os()));
}
