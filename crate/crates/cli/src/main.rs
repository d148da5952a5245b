mod cli;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use error::CliError;
use output::{Manifest, OutputDir};

fn output_of(command: &Command) -> Option<(&std::path::Path, cli::Format)> {
    match command {
        Command::Fit(a) => Some((&a.output, a.format)),
        Command::Predict(a) => Some((&a.output, a.format)),
        Command::Diagnose(a) => Some((&a.output, a.format)),
        Command::Simulate(a) => Some((&a.output, a.format)),
        Command::Reproduce(a) => Some((&a.output, a.format)),
        Command::BayesPredict(a) => Some((&a.output, a.format)),
        Command::Rerun(_) => None,
    }
}

fn run(cli: &Cli, argv: Vec<String>) -> Result<(), CliError> {
    if let Command::Rerun(a) = &cli.command {
        let manifest = Manifest::read(&a.manifest)?;
        let argv = commands::replay_argv(&manifest, &a.output)?;
        let replay = Cli::try_parse_from(std::iter::once("dlpls".to_string()).chain(argv.iter().cloned()))
            .map_err(|e| CliError::Usage(format!("manifest argv does not parse: {e}")))?;
        return run(&replay, argv);
    }
    let (dir, format) = output_of(&cli.command).expect("non-rerun commands have an output");
    let mut out = OutputDir::create(dir, format)?;
    match &cli.command {
        Command::Fit(a) => commands::fit(a, &mut out)?,
        Command::Predict(a) => commands::predict(a, &mut out)?,
        Command::Diagnose(a) => commands::diagnose(a, &mut out)?,
        Command::Simulate(a) => commands::simulate(a, &mut out)?,
        Command::Reproduce(a) => commands::reproduce(a, &mut out)?,
        Command::BayesPredict(a) => commands::bayes_predict(a, &mut out)?,
        Command::Rerun(_) => unreachable!(),
    }
    let config = serde_json::to_value(&cli.command).map_err(|e| CliError::Usage(e.to_string()))?;
    out.finish(argv, config, commands::seeds(&cli.command))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(&cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                msg.push_str(&format!(": {s}"));
                source = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}
