use clap::Parser;

use jumpfeedback::cli::{run, Args};

fn main() {
    let args = Args::parse();
    if let Err(e) = run(&args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
