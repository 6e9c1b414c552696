fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(bracketlab_cli::run(&args));
}
