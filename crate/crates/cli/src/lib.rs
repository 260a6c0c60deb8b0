//! Reproducible runs from a TOML configuration: scenario generation,
//! training stages, evaluation reports, α sweeps and rain nowcasts.

pub mod commands;
pub mod config;
pub mod dataset;

use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use nowcast_core::Error;

use crate::commands::Stage;
use crate::config::RunConfig;
use crate::dataset::MissingArtifact;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "nowcast", version, about = "Physics-constrained satellite nowcasting on synthetic scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the matching `paths` entry.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenarios with truth sidecars and coupled radar.
    Gen(Common),
    /// Run one training stage.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        stage: Stage,
    },
    /// Score forecasts by lead time.
    Eval(Common),
    /// Fine-tune and score one model per α.
    Sweep(Common),
    /// Fit the satellite-to-rain translator.
    TranslateTrain(Common),
    /// Forecast rain rate end to end and compare against persistence.
    Nowcast(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen(c)
            | Command::Eval(c)
            | Command::Sweep(c)
            | Command::TranslateTrain(c)
            | Command::Nowcast(c)
            | Command::Train { common: c, .. } => c,
        }
    }

    /// Training stages share an output directory, so their resolved
    /// configs carry the stage name.
    fn config_file(&self) -> String {
        match self {
            Command::Train { stage, .. } => format!("{}.config.toml", stage.name()),
            Command::TranslateTrain(_) => "translator.config.toml".into(),
            _ => "config.toml".into(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train { .. } => "train",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
            Command::TranslateTrain(_) => "translate-train",
            Command::Nowcast(_) => "nowcast",
        }
    }
}

/// Loads the config, prepares the output directory with the resolved
/// config and runs the command.
pub fn run(cli: &Cli) -> Result<String> {
    let common = cli.command.common();
    let cfg = RunConfig::load(&common.config)?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| commands::default_out(&cfg, cli.command.name()));
    fs::create_dir_all(&out).map_err(Error::from)?;
    cfg.write_resolved(&out.join(cli.command.config_file()))?;
    match &cli.command {
        Command::Gen(_) => commands::gen(&cfg, &out),
        Command::Train { stage, .. } => commands::train(&cfg, &out, *stage),
        Command::Eval(_) => commands::eval(&cfg, &out),
        Command::Sweep(_) => commands::sweep(&cfg, &out),
        Command::TranslateTrain(_) => commands::translate_train(&cfg, &out),
        Command::Nowcast(_) => commands::nowcast(&cfg, &out),
    }
}

/// Process exit code for a failed run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<MissingArtifact>() || cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Divergence { .. } | Error::NanInGraph { .. } | Error::Unstable { .. } | Error::NonFinite { .. } => {
                    EXIT_DIVERGED
                }
                Error::Io(_) | Error::Format(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}
