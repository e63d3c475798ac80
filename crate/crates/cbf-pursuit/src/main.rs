fn main() { std::process::exit(cbf_pursuit::cli::main_entry(&std::env::args().skip(1).collect::<Vec<_>>())); }
