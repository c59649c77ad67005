use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fleeg_cli::commands::{self, Common};
use fleeg_cli::{describe, exit_code};
use fleeg_core::harness::Mode;

#[derive(Parser)]
#[command(name = "fleeg", version, about = "Personalized federated learning on heterogeneous EEG formats")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Run seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            out: a.out,
            force: a.force,
            seed: a.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write each synthetic client's trials to an FTR1 file.
    Gen(CommonArgs),
    /// Train every fold in-process.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        federated: bool,
        #[arg(long)]
        baseline: bool,
    },
    /// Export per-channel saliency of every held-out subject.
    Saliency {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory of best-model weight files.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Coordinate a distributed federated run.
    Serve {
        #[command(flatten)]
        common: CommonArgs,
        /// Bind address; overrides the config.
        #[arg(long)]
        address: Option<String>,
    },
    /// Join a distributed run as one configured client.
    Client {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        name: String,
        /// Server address; overrides the config.
        #[arg(long)]
        address: Option<String>,
    },
    /// Print each client's local module.
    Arch(CommonArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(c) => commands::gen(&c.into()).map(drop),
        Command::Train { common, baseline, .. } => {
            let mode = if baseline { Mode::Baseline } else { Mode::Federated };
            commands::train(&common.into(), mode).map(drop)
        }
        Command::Saliency { common, weights } => commands::saliency(&common.into(), weights.as_deref()).map(drop),
        Command::Serve { common, address } => commands::serve_cmd(&common.into(), address.as_deref()).map(drop),
        Command::Client { common, name, address } => commands::client_cmd(&common.into(), &name, address.as_deref()),
        Command::Arch(c) => commands::arch(&c.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
