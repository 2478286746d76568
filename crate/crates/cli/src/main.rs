use std::process::ExitCode;

use clap::Parser;
use qevo_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli, &mut std::io::stdout()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Error messages already embed their causes.
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
