mod artifacts;
mod cli;
mod commands;

use artifacts::{InputError, RunInfo};
use clap::Parser;
use cli::{Cli, Command};
use std::process::ExitCode;

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(InputError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let info = |command| RunInfo { command, seed: cli.seed, threads: cli.threads };
    match &cli.command {
        Command::Parse(a) => commands::parse(a, &info("parse")),
        Command::Fp(a) => commands::fp(a, &info("fp")),
        Command::Split(a) => commands::split(a, &info("split")),
        Command::Train(a) => commands::train(a, &info("train")),
        Command::Eval(a) => commands::eval(a, &info("eval")),
        Command::Embed(a) => commands::embed(a, &info("embed")),
        Command::Nn(a) => commands::nn(a, &info("nn")),
        Command::Transfer(a) => commands::transfer(a, &info("transfer")),
        Command::Report(a) => commands::report(a, &info("report")),
        Command::Synth(a) => commands::synth(a, &info("synth")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let input = e.chain().any(|c| c.is::<InputError>());
            eprintln!("error: {e:#}");
            ExitCode::from(if input { 2 } else { 1 })
        }
    }
}
