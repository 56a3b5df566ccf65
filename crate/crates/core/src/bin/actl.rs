fn main() {
    eprintln!("actl: command-line interface not yet wired up");
    std::process::exit(5);
}
