use clap::Parser;
use gaple::cli::{main_with, Cli};

fn main() {
    std::process::exit(main_with(&Cli::parse()));
}
