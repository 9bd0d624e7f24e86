use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use difflearn_cli::{compare, presets_listing, run_command, Cli, Command, DATA_ENV};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        None => {
            Cli::command().print_help().ok();
            println!();
            return ExitCode::SUCCESS;
        }
        Some(Command::Presets) => Ok(presets_listing()),
        Some(Command::Run(args)) => run_command(&args, std::env::var(DATA_ENV).ok().as_deref()),
        Some(Command::Compare(args)) => compare(&args.records, args.threshold).map(|c| {
            for w in &c.warnings {
                eprintln!("warning: {w}");
            }
            c.table
        }),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
