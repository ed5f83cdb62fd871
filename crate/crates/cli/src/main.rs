mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Flags;

#[derive(Parser, Debug)]
#[command(name = "sceneflow", version, about = "Learn scene-graph layouts from point clouds and generate new ones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus and its rule set.
    Synth {
        /// Keep only the architectural shell of each room.
        #[arg(long)]
        empty_rooms: bool,
    },
    /// Train a model and write the checkpoint and loss curve.
    Train,
    /// Extend every room in --data with new objects and relations.
    Generate,
    /// Score generated graphs.
    Evaluate,
    /// Convert a graph file, or every graph in a directory, to Graphviz DOT.
    ExportDot {
        #[arg(long)]
        input: std::path::PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(sceneflow::Error),
}

impl From<sceneflow::Error> for CliError {
    fn from(e: sceneflow::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(sceneflow::Error::InvalidArgument(_)) => 1,
            CliError::Core(e) if e.is_data_error() => 2,
            CliError::Core(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = cli.flags.resolve().and_then(|config| match cli.command {
        Command::Synth { empty_rooms } => commands::synth(&config, empty_rooms),
        Command::Train => commands::train(&config),
        Command::Generate => commands::generate(&config),
        Command::Evaluate => commands::evaluate(&config),
        Command::ExportDot { input } => commands::export_dot(&config, &input),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
