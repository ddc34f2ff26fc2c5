fn main() { std::process::exit(trajworld::cli::dispatch(&std::env::args().collect::<Vec<_>>())); }
