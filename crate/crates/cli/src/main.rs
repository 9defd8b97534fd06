fn main() {
    std::process::exit(monge_lab::run(std::env::args_os()));
}
