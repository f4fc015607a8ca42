use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mef_cli::commands;
use mef_cli::config::load_config;
use mef_cli::CliError;

/// Multi-exposure image fusion with jointly searched structure and loss.
#[derive(Parser)]
#[command(name = "mef", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted config overrides, e.g. `--set search.lr_alpha=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Search the architecture and training loss on the train manifest.
    Search(Common),
    /// Train the finalized architecture under the searched loss weights.
    Train(Common),
    /// Fuse exposure pairs with a trained checkpoint.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Under-exposed input (explicit-pair mode, with --over and --out).
        #[arg(long, requires = "over", requires = "out")]
        under: Option<PathBuf>,
        /// Over-exposed input.
        #[arg(long)]
        over: Option<PathBuf>,
        /// Output PNG path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate fused outputs and write the metric report.
    Eval(Common),
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Search(c) => {
            let cfg = load_config(c.config.as_deref(), &c.set, c.seed)?;
            commands::cmd_search(&cfg)
        }
        Command::Train(c) => {
            let cfg = load_config(c.config.as_deref(), &c.set, c.seed)?;
            commands::cmd_train(&cfg)
        }
        Command::Fuse {
            common,
            under,
            over,
            out,
        } => {
            let cfg = load_config(common.config.as_deref(), &common.set, common.seed)?;
            let explicit = match (&under, &over, &out) {
                (Some(u), Some(o), Some(f)) => Some((u.as_path(), o.as_path(), f.as_path())),
                _ => None,
            };
            commands::cmd_fuse(&cfg, explicit)
        }
        Command::Eval(c) => {
            let cfg = load_config(c.config.as_deref(), &c.set, c.seed)?;
            commands::cmd_eval(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
