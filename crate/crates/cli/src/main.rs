//! `logitrank` command-line front end.

mod args;
mod commands;
mod output;
mod verify;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use output::{CliError, CliResult, Run};

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let dir = cli.out_dir;
    match &cli.command {
        Command::MakeModel(a) => {
            commands::make_model(a, &Run::new("make-model", a, dir)?)?;
        }
        Command::BuildMatrix(a) => {
            commands::build_matrix(a, &Run::new("build-matrix", a, dir)?)?;
        }
        Command::Analyze(a) => {
            let out = dir.join(&a.output);
            commands::analyze(a, &Run::new("analyze", a, out)?)?;
        }
        Command::Lingen(a) => {
            let out = dir.join(&a.output);
            commands::lingen(a, &Run::new("lingen", a, out)?)?;
        }
        Command::Steal(a) => {
            let out = dir.join(&a.output);
            commands::steal_cmd(a, &Run::new("steal", a, out)?)?;
        }
        Command::Verify(a) => {
            let out = dir.join(&a.output);
            verify::verify(a, &Run::new("verify", a, out)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
