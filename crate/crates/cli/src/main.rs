//! `molgram` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 evaluator error.
//! Machine-readable results go to stdout as JSON; logs go to stderr.

mod args;
mod commands;
mod settings;

use args::{Cli, Command};
use clap::Parser;
use std::fmt;
use std::process::ExitCode;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Evaluator(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Evaluator(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Evaluator(m) => write!(f, "evaluator error: {m}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => settings::read_config(p)?,
        None => Default::default(),
    };
    let global = settings::merge(&cli.global, &file)?;
    if let Some(t) = global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot set thread count: {e}")))?;
    }
    match cli.command {
        Command::Infer(a) => commands::infer(&global, settings::merge(&a, &file)?),
        Command::Parse(a) => commands::parse(&global, settings::merge(&a, &file)?),
        Command::Decode(a) => commands::decode(&global, settings::merge(&a, &file)?),
        Command::Sample(a) => commands::sample(&global, settings::merge(&a, &file)?),
        Command::Stats(a) => commands::stats(&global, settings::merge(&a, &file)?),
        Command::Pretrain(a) => commands::pretrain(&global, settings::merge(&a, &file)?),
        Command::Optimize(a) => commands::optimize(&global, settings::merge(&a, &file)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("molgram: {e}");
            ExitCode::from(e.code())
        }
    }
}
