use std::io::IsTerminal;
use std::process::ExitCode;

use clap::Parser;
use mediate_cli::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    match execute(cli, &mut std::io::stdout().lock(), &mut stdin.lock(), interactive) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
