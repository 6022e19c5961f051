//! Command-line pipeline: data generation, featurization, training,
//! prediction, evaluation, backtesting, ablations and gradient checks.

pub mod commands;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use graphsent_core::config::RunConfig;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "GRAPHSENT_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "graphsent", version, about = "Graph-aware transformer forecasting with sentiment fusion")]
pub struct Cli {
    /// Flat TOML configuration file (default: $GRAPHSENT_CONFIG, else the desk preset).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in preset: desk, tiny or paper.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic market and sentiment panel.
    Gen {
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Write the normalized feature panel.
    Featurize {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train the model and write the checkpoint, log, edge and attention reports.
    Train {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Forecast the test period with the model and the baselines.
    Predict {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Defaults to <out>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Accuracy, significance and regime report for a predictions file.
    Evaluate {
        #[arg(long, default_value = "out/predictions.csv")]
        predictions: PathBuf,
        /// Market data directory enabling the volatility-regime breakdown.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Long-short backtest of every model's one-day forecasts.
    Backtest {
        #[arg(long, default_value = "out/predictions.csv")]
        predictions: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train and test every ablation configuration.
    Ablate {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Finite-difference check of the full composite loss gradient.
    Gradcheck {
        /// Coordinates checked per parameter tensor.
        #[arg(long, default_value_t = 12)]
        coords: usize,
    },
    /// Print the resolved configuration.
    Config,
}

/// Resolves `--config`, `--preset`, then the environment variable, then desk.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    if let Some(p) = &cli.preset {
        return Ok(RunConfig::preset(p)?);
    }
    let path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))
        }
        None => Ok(RunConfig::desk()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Gen { out } => commands::gen(&cfg, &out),
        Command::Featurize { data, out } => commands::featurize(&cfg, &data, &out),
        Command::Train { data, out } => commands::train_cmd(&cfg, &data, &out),
        Command::Predict { data, checkpoint, out } => {
            let ck = checkpoint.unwrap_or_else(|| out.join(commands::CHECKPOINT_FILE));
            commands::predict_cmd(&cfg, &data, &ck, &out)
        }
        Command::Evaluate { predictions, data, out } => commands::evaluate_cmd(&cfg, &predictions, data.as_deref(), &out),
        Command::Backtest { predictions, out } => commands::backtest_cmd(&cfg, &predictions, &out),
        Command::Ablate { data, out } => commands::ablate_cmd(&cfg, &data, &out),
        Command::Gradcheck { coords } => commands::gradcheck_cmd(&cfg, coords),
        Command::Config => {
            commands::config_cmd(&cfg);
            Ok(())
        }
    }
}

/// Parses arguments and runs; returns the process exit status (2 for usage
/// errors, 1 for any failure inside a command).
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
