//! Command-line driver: `train`, `sweep`, `rank` and `check`.
//!
//! Exit codes: 0 on success, 1 when a checked invariant fails, 2 for usage,
//! configuration and I/O errors.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use samrank_core::experiments::Prop1Fault;

pub use commands::{CliError, CliResult, Overrides};
pub use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "samrank", version, about = "Feature-rank experiments with sharpness-aware minimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one student network on the teacher-student task.
    Train(RunArgs),
    /// Train every (rho, seed) cell of the configured grid.
    Sweep(RunArgs),
    /// PCA rank of a feature matrix stored as FMAT.
    Rank(RankArgs),
    /// Run the step-decomposition battery on random two-layer nets.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        v == OnOff::On
    }
}

fn threshold_list(s: &str) -> Result<Vec<f64>, String> {
    config::parse_reals(s)
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// key=value configuration file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// train: task and batch seed. sweep: run this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated variance thresholds.
    #[arg(long, value_parser = threshold_list)]
    pub thresholds: Option<::std::vec::Vec<f64>>,
    /// Mean-center features before PCA.
    #[arg(long, value_enum)]
    pub center: Option<OnOff>,
    /// Worker threads for sweeps.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            thresholds: self.thresholds.clone(),
            center: self.center.map(bool::from),
            jobs: self.jobs,
        }
    }
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// FMAT file with one row per example.
    pub matrix: PathBuf,
    /// Thresholds and centering are read from diag.* keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = threshold_list)]
    pub thresholds: Option<::std::vec::Vec<f64>>,
    #[arg(long, value_enum)]
    pub center: Option<OnOff>,
    /// Write rank.json here instead of next to the matrix.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    FlipRegSign,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Random cases per check.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => {
            let ov = args.overrides();
            let cfg = commands::load_config(args.config.as_deref(), &ov)?;
            let dir = cfg.output_dir.clone();
            let summary = commands::train(cfg, ov.seed)?;
            if let Some(step) = summary["diverged_at"].as_u64() {
                eprintln!("warning: run diverged at step {step}");
            }
            println!("{}", dir.display());
        }
        Command::Sweep(args) => {
            let ov = args.overrides();
            let cfg = commands::load_config(args.config.as_deref(), &ov)?;
            let dir = cfg.output_dir.clone();
            let result = commands::sweep(cfg, ov.seed)?;
            for m in &result.medians {
                let ranks: Vec<String> = m.ranks.iter().map(|r| r.to_string()).collect();
                println!(
                    "rho={} runs={} diverged={} test_loss={:.4} ranks=[{}] active={} weight_norm={:.3}",
                    m.rho,
                    m.runs,
                    m.diverged,
                    m.test_loss,
                    ranks.join(", "),
                    m.active_units,
                    m.weight_norm
                );
            }
            println!("{}", dir.display());
        }
        Command::Rank(args) => {
            let ov = Overrides {
                thresholds: args.thresholds.clone(),
                center: args.center.map(bool::from),
                ..Overrides::default()
            };
            let cfg = commands::load_config(args.config.as_deref(), &ov)?;
            let report = commands::rank(&args.matrix, &cfg, args.out.as_deref())?;
            for t in &cfg.run.diag.thresholds {
                println!("rank@{t} = {}", report["ranks"][t.to_string()]);
            }
        }
        Command::Check(args) => {
            let fault = match args.inject_fault {
                Some(Fault::FlipRegSign) => Prop1Fault::FlipRegularizationSign,
                None => Prop1Fault::None,
            };
            let (table, passed) = commands::check(args.trials, args.seed, fault)?;
            print!("{table}");
            if !passed {
                return Err(CliError::Invariant("one or more checks failed".into()));
            }
        }
    }
    Ok(())
}
