use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use sfr_core::train::TrainMode;

use sfr_cli::commands::{self, DEFAULT_MIC_COUNTS, DEFAULT_RANKS};
use sfr_cli::error::Result;
use sfr_cli::spec::ExperimentSpec;

/// Deep-prior sound-field reconstruction experiments.
#[derive(Parser)]
#[command(name = "sfr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec file (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Override the spec's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the spec's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SpecArgs {
    fn load(&self) -> Result<(ExperimentSpec, PathBuf)> {
        let mut spec = ExperimentSpec::load(&self.spec)?;
        if let Some(seed) = self.seed {
            spec.train.seed = seed;
        }
        // Input paths resolve against the spec's directory, but outputs land
        // relative to the invocation directory.
        let out = self.out.clone().unwrap_or_else(|| spec.output_dir.clone());
        Ok((spec, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a scratch deep prior on the pretrain mask and save a checkpoint.
    Pretrain {
        #[command(flatten)]
        common: SpecArgs,
    },
    /// Adapt a base model to the moved source (ft, lora, or scratch).
    Adapt {
        #[command(flatten)]
        common: SpecArgs,
        /// Pretrained checkpoint (required for ft/lora).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training mode: ft, lora, or scratch.
        #[arg(long)]
        mode: String,
        /// LoRA rank (lora mode; default 16).
        #[arg(long)]
        rank: Option<usize>,
    },
    /// One LoRA adaptation per rank over identical data and seeds.
    SweepRank {
        #[command(flatten)]
        common: SpecArgs,
        /// Pretrained checkpoint; omitted -> pretrain first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated rank list.
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
    },
    /// Scratch/ft/lora comparison across microphone counts.
    SweepMics {
        #[command(flatten)]
        common: SpecArgs,
        /// Pretrained checkpoint; omitted -> pretrain first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated list of observed-channel counts.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Pretrain per room and adapt across all room pairs.
    CrossRoom {
        #[command(flatten)]
        common: SpecArgs,
        /// Comma-separated list of observed-channel counts.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Aggregate a run directory into a summary and plots.
    Report {
        /// Directory holding run CSVs.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { common } => {
            let (spec, out) = common.load()?;
            commands::cmd_pretrain(&spec, &out)?;
        }
        Command::Adapt { common, checkpoint, mode, rank } => {
            let (spec, out) = common.load()?;
            let mode = TrainMode::from_str(&mode)
                .map_err(|e| sfr_cli::CliError::invalid(e.to_string()))?;
            commands::cmd_adapt(&spec, checkpoint.as_deref(), mode, rank, &out)?;
        }
        Command::SweepRank { common, checkpoint, ranks } => {
            let (spec, out) = common.load()?;
            let ranks = ranks.unwrap_or_else(|| DEFAULT_RANKS.to_vec());
            commands::cmd_sweep_rank(&spec, checkpoint.as_deref(), &ranks, &out)?;
        }
        Command::SweepMics { common, checkpoint, counts } => {
            let (spec, out) = common.load()?;
            let counts = counts.unwrap_or_else(|| DEFAULT_MIC_COUNTS.to_vec());
            commands::cmd_sweep_mics(&spec, checkpoint.as_deref(), &counts, &out)?;
        }
        Command::CrossRoom { common, counts } => {
            let (spec, out) = common.load()?;
            let counts = counts.unwrap_or_else(|| vec![20, 33]);
            commands::cmd_cross_room(&spec, &counts, &out)?;
        }
        Command::Report { out } => {
            commands::cmd_report(&out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
