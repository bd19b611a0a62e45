use std::process::ExitCode;

use clap::Parser;

use holorec_cli::cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match holorec_cli::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
