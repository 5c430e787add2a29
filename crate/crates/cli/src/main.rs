fn main() {
    std::process::exit(manifold_dp_cli::run(std::env::args_os()));
}
