use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use pbt::cli::{self, Overrides, SuiteKind};
use pbt::engine::ExecMode;

#[derive(Parser)]
#[command(
    name = "pbt",
    about = "Population based training: configuration-driven experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts to the run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the execution mode: serial, async or partial-sync.
        #[arg(long)]
        mode: Option<String>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a multi-seed protocol (fig2, ablations or popsize) and write
    /// summary.csv.
    Suite {
        /// fig2 | ablations | popsize
        name: String,
        #[arg(long)]
        config: PathBuf,
        /// Re-base the suite's seed list at this value.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Post-process an existing run directory (phylogeny, lineages, curve
    /// aggregation).
    Analyze {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
}

fn parse_mode(mode: Option<String>) -> Result<Option<ExecMode>> {
    match mode.as_deref() {
        None => Ok(None),
        Some("serial") => Ok(Some(ExecMode::Serial)),
        Some("async") => Ok(Some(ExecMode::Async)),
        Some("partial-sync") => Ok(Some(ExecMode::PartialSync)),
        Some(other) => bail!("unknown mode `{other}` (expected serial, async or partial-sync)"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, mode, out } => {
            let ov = Overrides { seed, mode: parse_mode(mode)?, out };
            cli::cmd_run(&config, &ov)?;
        }
        Command::Suite { name, config, seed, mode, out } => {
            let suite: SuiteKind = name.parse()?;
            let ov = Overrides { seed, mode: parse_mode(mode)?, out };
            cli::cmd_suite(&config, suite, &ov)?;
        }
        Command::Analyze { run_dir, top_k } => {
            cli::cmd_analyze(&run_dir, top_k)?;
        }
    }
    Ok(())
}
