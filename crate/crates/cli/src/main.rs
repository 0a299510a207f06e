mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
    }
    match &cli.command {
        Command::Theory(a) => commands::theory(a)?,
        Command::Simulate(a) => commands::simulate(a)?,
        Command::Compare { exp, theory_sigma2 } => {
            if !commands::compare(exp, *theory_sigma2)? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Tune(a) => commands::tune(a)?,
        Command::ValidateRmt(a) => commands::validate_rmt(a)?,
        Command::Scenarios => commands::scenarios()?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
