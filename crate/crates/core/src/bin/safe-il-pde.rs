use clap::Parser;
use safe_il_pde::cli::{main_with, Args};

fn main() {
    std::process::exit(main_with(&Args::parse()));
}
