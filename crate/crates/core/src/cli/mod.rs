//! The `mop` command-line front end.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::error::{MopError, Result};
pub use commands::SynthArgs;
pub use config::{config_help, CompressionConfig, RunConfig, SourceConfig, WindowConfig};

#[derive(Debug, Parser)]
#[command(name = "mop", version, about = "Multi-scale orderless pooling: fit, encode and evaluate")]
pub struct Cli {
    /// Run configuration (JSON). Relative paths inside it are resolved
    /// against the file's directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides pipeline.seed and sgd.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides out_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit patch PCA, codebooks and pooled PCA on the training images.
    Fit,
    /// Encode every image into features.mopd.
    Encode,
    /// Train one-vs-all SVMs on the train split, report test accuracy.
    Classify,
    /// Nearest-neighbour retrieval over the encoded features, report mAP.
    Retrieve,
    /// Test accuracy under each transform of the configured sweep.
    Invariance,
    /// Best-scoring sliding window for the ground-truth class of each test image.
    Windows {
        /// Only search these image ids.
        #[arg(long = "image")]
        images: Vec<String>,
    },
    /// Write a synthetic grating dataset plus labels, split and a starter config.
    Synth {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 24)]
        train_per_class: usize,
    },
}

/// The clap command with the config-key reference appended to the help.
pub fn command() -> clap::Command {
    Cli::command().after_help(config_help())
}

/// Parses arguments; help, version and usage errors exit the process.
pub fn parse_from<I, T>(args: I) -> Cli
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().get_matches_from(args);
    Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Loads the config named by `--config`, applies the global overrides and
/// validates it.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| MopError::invalid("--config <path> is required for this command"))?;
    let mut cfg = RunConfig::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    match &mut cfg.source {
        SourceConfig::Toy { images_dir, .. } => resolve(&base, images_dir),
        SourceConfig::Store { matrix, manifest } => {
            resolve(&base, matrix);
            resolve(&base, manifest);
        }
    }
    for p in [&mut cfg.labels, &mut cfg.split, &mut cfg.relevance].into_iter().flatten() {
        resolve(&base, p);
    }
    resolve(&base, &mut cfg.out_dir);
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(MopError::invalid("--threads must be >= 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::Synth { classes, per_class, train_per_class } = &cli.command {
        let out = cli
            .out
            .as_ref()
            .ok_or_else(|| MopError::invalid("synth needs --out <dir>"))?;
        let args = SynthArgs {
            classes: *classes,
            per_class: *per_class,
            train_per_class: *train_per_class,
            seed: cli.seed.unwrap_or(0),
        };
        return commands::cmd_synth(out, &args);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Fit => commands::cmd_fit(&cfg),
        Command::Encode => commands::cmd_encode(&cfg),
        Command::Classify => commands::cmd_classify(&cfg),
        Command::Retrieve => commands::cmd_retrieve(&cfg),
        Command::Invariance => commands::cmd_invariance(&cfg),
        Command::Windows { images } => commands::cmd_windows(&cfg, images),
        Command::Synth { .. } => unreachable!(),
    }
}
