mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use deeppolar::Error;

#[derive(Parser, Debug)]
#[command(name = "deeppolar", version, about = "Polar and DeepPolar code workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Print the information and frozen sets of a polar code.
    Construct(Args),
    /// Train a DeepPolar code (direct, stage1, stage2 or curriculum).
    Train(Args),
    /// Fine-tune a trained code (ste, bler, highsnr or channel).
    Finetune(Args),
    /// Monte-Carlo BER/BLER sweep.
    Eval(Args),
    /// Distance profile or first-error histogram.
    Analyze(Args),
    /// Train a neural decoder for the classical polar encoder.
    DecodeOnly(Args),
    /// Describe a checkpoint.
    Inspect(Args),
}

#[derive(clap::Args, Debug, Clone)]
struct Args {
    /// TOML file with run configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` overrides applied after the file.
    overrides: Vec<String>,
}

impl Command {
    fn args(&self) -> &Args {
        match self {
            Command::Construct(a)
            | Command::Train(a)
            | Command::Finetune(a)
            | Command::Eval(a)
            | Command::Analyze(a)
            | Command::DecodeOnly(a)
            | Command::Inspect(a) => a,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Unsupported(_) | Error::Parse { .. } | Error::Version { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let args = cli.command.args();
    let result =
        RunConfig::load(args.config.as_deref(), &args.overrides).and_then(|cfg| commands::run(&cli.command, &cfg));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
