use std::process::ExitCode;

use clap::Parser;
use coherent_observer_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = cli.command.split();
    match run(command, &args) {
        Ok(outcome) => {
            for check in &outcome.checks {
                println!("{}", check.summary_line());
            }
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: one or more checks failed", command.name());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
