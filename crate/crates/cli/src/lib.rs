//! Command-line front end: configuration files, run directories and the
//! `synth`, `tile`, `pretrain`, `finetune`, `evaluate`, `ablate` and `plot`
//! commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod lock;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::*;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use plot::cmd_plot;

#[derive(Debug, Parser)]
#[command(name = "glcnet", version, about = "Contrastive pretraining and fine-tuning for segmentation networks")]
pub struct Cli {
    /// Run configuration file (TOML). Built-in full-scale defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set pretrain.epochs=5`. Repeatable;
    /// applied after the file and before command flags.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Root for relative input paths (default: $GLCNET_DATA_ROOT, then the
    /// working directory).
    #[arg(long, global = true)]
    pub data_root: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes with masks.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cut scenes into tiles and write split manifests.
    Tile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Self-supervised pretraining on the pretrain split.
    Pretrain {
        #[command(flatten)]
        io: RunIo,
        /// glcnet, simclr, nostyle, noglobe, nolocal or nostyle_and_nolocal.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Supervised fine-tuning on a labeled subset.
    Finetune {
        #[command(flatten)]
        io: RunIo,
        /// Pretraining checkpoint to initialize from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma separated groups to load, or `none`.
        #[arg(long)]
        load_groups: Option<String>,
        #[arg(long)]
        label_fraction: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a fine-tuned model on the test split.
    Evaluate {
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Defaults to the model's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain, fine-tune and evaluate all five ablation configurations.
    Ablate {
        #[command(flatten)]
        io: RunIo,
    },
    /// Render SVG plots from the CSVs in a run directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunIo {
    /// Tile directory written by `tile`.
    #[arg(long)]
    pub tiles: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Set `key` (dotted path) in a TOML table to `value`, parsed as a TOML
/// value when possible and as a string otherwise.
fn set_key(table: &mut toml::Table, key: &str, value: &str) -> CliResult<()> {
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Usage(format!("empty key in `{key}`")))?;
    let mut t = table;
    for p in parts {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("`{p}` in `{key}` is not a section")))?;
    }
    t.insert(last.to_string(), parsed);
    Ok(())
}

/// Defaults, then the file, then `KEY=VALUE` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(vec![format!("{}: {e}", p.display())]))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        set_key(&mut table, k.trim(), v.trim())?;
    }
    RunConfig::parse(&toml::to_string(&table).expect("table serializes"))
}

fn apply<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Resolve the config for `cli` and run its command.
pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    if let Some(root) = cli.data_root {
        cfg.paths.data_root = Some(root);
    }
    match cli.command {
        Command::Synth { out, scenes, seed } => {
            apply(&mut cfg.data.synth_scenes, scenes);
            apply(&mut cfg.synth.seed, seed);
            let o = cmd_synth(&cfg, &out)?;
            println!("wrote {} scenes to {}", o.scenes.len(), out.display());
        }
        Command::Tile { input, out, crop, stride } => {
            apply(&mut cfg.data.crop_size, crop);
            apply(&mut cfg.data.stride, stride);
            print!("{}", cmd_tile(&cfg, &input, &out)?.summary());
        }
        Command::Pretrain { io, method, epochs, seed } => {
            apply(&mut cfg.pretrain.method, method);
            apply(&mut cfg.pretrain.epochs, epochs);
            apply(&mut cfg.seeds.pretrain, seed);
            let o = cmd_pretrain(&cfg, &io.tiles, &io.out)?;
            println!("best epoch {} loss {:.5}; checkpoint {}", o.best.meta.epoch, o.best.meta.loss, io.out.join(CHECKPOINT).display());
        }
        Command::Finetune {
            io,
            checkpoint,
            load_groups,
            label_fraction,
            epochs,
            seed,
        } => {
            apply(&mut cfg.finetune.load_groups, load_groups);
            apply(&mut cfg.finetune.label_fraction, label_fraction);
            apply(&mut cfg.finetune.epochs, epochs);
            apply(&mut cfg.seeds.finetune, seed);
            let o = cmd_finetune(&cfg, &io.tiles, checkpoint.as_deref(), &io.out)?;
            println!("fine-tuned on {} tiles; model {}", o.subset_size, io.out.join(MODEL).display());
        }
        Command::Evaluate { tiles, model, out } => {
            let out = out.unwrap_or_else(|| model.parent().map(Path::to_path_buf).unwrap_or_default());
            print!("{}", cmd_evaluate(&cfg, &tiles, &model, &out)?.summary());
        }
        Command::Ablate { io } => {
            print!("{}", ablation_csv(&cmd_ablate(&cfg, &io.tiles, &io.out)?));
        }
        Command::Plot { run } => {
            for f in cmd_plot(&run)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
