fn main() {
    std::process::exit(hfgauss::pipeline::cli::run(std::env::args_os()));
}
