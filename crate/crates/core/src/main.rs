use clap::Parser;

use psbt_core::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
