fn main() {
    std::process::exit(bimanual::run());
}
