use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use simignore::cli::{run, Cli, CliError};

fn thread_limit() -> Result<(), CliError> {
    match std::env::var("SIMIGNORE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                simignore::set_thread_limit(n);
                Ok(())
            }
            _ => Err(CliError::Usage(format!(
                "SIMIGNORE_THREADS must be an integer >= 1, got {v:?}"
            ))),
        },
        Err(_) => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            return ExitCode::from(1);
        }
    };
    match thread_limit().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
