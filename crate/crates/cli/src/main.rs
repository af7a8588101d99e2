fn main() {
    std::process::exit(volfuse_cli::run());
}
