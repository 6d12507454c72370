use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = neuronlens_cli::Cli::parse();
    match neuronlens_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
