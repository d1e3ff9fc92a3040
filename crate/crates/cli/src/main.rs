//! Command-line front end: `dpzo <calibrate|schedule|prune|train|eval>`.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpzo::harness::commands::{self, CalibrateArgs, CHECKPOINT_FILE};
use dpzo::harness::ExperimentConfig;
use dpzo::Error;

#[derive(Parser)]
#[command(name = "dpzo", version, about = "Differentially private zeroth-order optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Noise multiplier from both calibration routes plus the
    /// subsampling and composition arithmetic.
    Calibrate(CalibrateCmd),
    /// Per-stage (beta, eta, T) table.
    Schedule(Common),
    /// Data-free saliency pass; writes a checkpoint carrying the mask.
    Prune(Common),
    /// Optional pruning, then the stagewise private run.
    Train(Common),
    /// Mean loss of a checkpoint on the configured problem.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CalibrateCmd {
    /// Take every value not given on the command line from this config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target epsilon; `inf` for a non-private run.
    #[arg(long, value_parser = parse_eps)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Total optimizer steps T.
    #[arg(long)]
    steps: Option<u64>,
    /// Directions per step P.
    #[arg(long)]
    directions: Option<u64>,
    /// Minibatch size m.
    #[arg(long)]
    batch: Option<u64>,
    /// Dataset size n.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    /// Slack of the composition bound.
    #[arg(long, default_value_t = 1e-5)]
    delta_prime: f64,
}

fn parse_eps(s: &str) -> Result<f64, String> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>().map_err(|e| e.to_string())
}

fn load(common: &Common) -> dpzo::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn calibrate_args(cmd: &CalibrateCmd) -> dpzo::Result<CalibrateArgs> {
    let base = match &cmd.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            let n = cfg.build_problem()?.data.len() as u64;
            Some(CalibrateArgs::from_config(&cfg, n)?)
        }
        None => None,
    };
    let need = |flag: &str, v: Option<f64>, from: Option<f64>| {
        v.or(from)
            .ok_or_else(|| Error::Config(format!("calibrate needs --{flag} or --config")))
    };
    let need_u = |flag: &str, v: Option<u64>, from: Option<u64>| {
        v.or(from)
            .ok_or_else(|| Error::Config(format!("calibrate needs --{flag} or --config")))
    };
    Ok(CalibrateArgs {
        epsilon: need("eps", cmd.eps, base.map(|b| b.epsilon))?,
        delta: need("delta", cmd.delta, base.map(|b| b.delta))?,
        steps: need_u("steps", cmd.steps, base.map(|b| b.steps))?,
        directions: need_u("directions", cmd.directions, base.map(|b| b.directions))?,
        batch: need_u("batch", cmd.batch, base.map(|b| b.batch))?,
        n: need_u("n", cmd.n, base.map(|b| b.n))?,
        c1: cmd.c1.or(base.map(|b| b.c1)).unwrap_or(1.0),
        c2: cmd.c2.or(base.map(|b| b.c2)).unwrap_or(1.0),
        delta_prime: cmd.delta_prime,
    })
}

fn run(cli: Cli) -> dpzo::Result<()> {
    match cli.command {
        Command::Calibrate(cmd) => {
            println!("{}", commands::calibrate(calibrate_args(&cmd)?)?);
        }
        Command::Schedule(common) => {
            println!("{}", commands::schedule(&load(&common)?)?);
        }
        Command::Prune(common) => {
            println!("{}", commands::prune(&load(&common)?, &common.out)?);
        }
        Command::Train(common) => {
            let report = commands::train(&load(&common)?, &common.out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{report}");
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common)?;
            let path = checkpoint.unwrap_or_else(|| Path::new(&common.out).join(CHECKPOINT_FILE));
            println!("{}", commands::eval(&cfg, &path)?);
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
            if e.is_numeric() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
