fn main() { std::process::exit(tlra::cli::run(std::env::args().skip(1).collect())); }
