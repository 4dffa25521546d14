fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(code2title::cli::run(&args));
}
