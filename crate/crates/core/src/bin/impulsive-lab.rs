use clap::Parser;
use impulsive::harness::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let result = run(&cli);
    if let Some(e) = &result.error {
        eprintln!("error: {e}");
    }
    for o in &result.outputs {
        println!("{o}");
    }
    std::process::exit(result.exit_code);
}
