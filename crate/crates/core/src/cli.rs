//! Command-line front end.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::augment::Strategy;
use crate::config::{resolve, Preset};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_N_FAKE;
use crate::run::{analyze, eval_fid, mask_debug, train_experiment, AnalysisKind, AnalysisOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;
pub const EXIT_CAPABILITY: i32 = 6;
pub const EXIT_LOCKED: i32 = 7;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parameter(_) | Error::Spec(_) => EXIT_CONFIG,
        Error::Data(_) | Error::InsufficientData(_) | Error::Count { .. } | Error::Image(_) => EXIT_DATA,
        Error::Numeric { .. } => EXIT_NUMERIC,
        Error::Checkpoint { .. } => EXIT_CHECKPOINT,
        Error::Capability(_) => EXIT_CAPABILITY,
        Error::Locked { .. } => EXIT_LOCKED,
        Error::Shape(_) | Error::Io(_) | Error::Json(_) => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mixgan", version, about = "Mixed-sample GAN training lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a generator/discriminator pair
    Train {
        /// TOML experiment file, merged over the preset
        #[arg(long)]
        config: Option<PathBuf>,
        /// case1, case2 or case3 (default case1)
        #[arg(long)]
        preset: Option<String>,
        /// none, mixup, cutmix or srmix
        #[arg(long)]
        mix: Option<String>,
        /// dataset URI: a folder or synthetic://<kind>?n=..&seed=..
        #[arg(long)]
        dataset: Option<String>,
        /// generator iterations
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// run directory
        #[arg(long)]
        output: Option<PathBuf>,
        /// dotted-key override such as train.lr=0.0002 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// continue from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// FID of a checkpoint's generator
    EvalFid {
        #[arg(long)]
        checkpoint: PathBuf,
        /// defaults to the dataset stored with the checkpoint
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, default_value_t = DEFAULT_N_FAKE)]
        n_fake: usize,
        #[arg(long, default_value = "toy")]
        extractor: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// report file (default: <checkpoint>.fid.json)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score histograms, discriminator heatmaps or image grids
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// histograms, heatmaps or grid
        #[arg(long)]
        what: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write sampled masks as grayscale images
    MaskDebug {
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "masks")]
        out: PathBuf,
    },
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Parameter(m) => Error::Config(m),
        other => other,
    }
}

/// Executes a parsed command, printing a short result on stdout.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            preset,
            mix,
            dataset,
            iterations,
            seed,
            output,
            mut overrides,
            resume,
        } => {
            let preset = preset.map(|p| p.parse::<Preset>()).transpose()?;
            let mut flags = Vec::new();
            if let Some(m) = mix {
                let s: Strategy = m.parse().map_err(config_error)?;
                flags.push(format!("train.mix.strategy=\"{}\"", s.name()));
            }
            if let Some(d) = dataset {
                flags.push(format!("dataset={}", toml::Value::String(d)));
            }
            if let Some(n) = iterations {
                flags.push(format!("train.total_iterations={n}"));
            }
            if let Some(s) = seed {
                flags.push(format!("train.seed={s}"));
            }
            if let Some(o) = output {
                flags.push(format!("output_dir={}", toml::Value::String(o.display().to_string())));
            }
            // explicit --set overrides win over the convenience flags
            flags.append(&mut overrides);
            let cfg = resolve(preset, config.as_deref(), &flags)?;
            let record = train_experiment(&cfg, resume.as_deref())?;
            println!("metrics: {}", record.metrics_log.display());
            for c in &record.checkpoints {
                println!("checkpoint: {}", c.display());
            }
            if let Some((it, fid)) = record.fid_history.last() {
                println!("fid@{it}: {fid}");
            }
            Ok(())
        }
        Command::EvalFid {
            checkpoint,
            dataset,
            n_fake,
            extractor,
            seed,
            report,
        } => {
            let r = eval_fid(&checkpoint, dataset.as_deref(), n_fake, &extractor, seed)?;
            let path = report.unwrap_or_else(|| {
                let mut p = checkpoint.clone().into_os_string();
                p.push(".fid.json");
                PathBuf::from(p)
            });
            std::fs::write(&path, serde_json::to_string_pretty(&r)?)?;
            println!("{}", r.fid);
            Ok(())
        }
        Command::Analyze {
            checkpoint,
            what,
            out,
            dataset,
            samples,
            count,
            rows,
            cols,
            seed,
        } => {
            let kind: AnalysisKind = what.parse()?;
            let opts = AnalysisOptions {
                samples,
                count,
                rows,
                cols,
                seed,
                dataset,
                out,
            };
            for f in analyze(&checkpoint, kind, &opts)? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::MaskDebug {
            strategy,
            resolution,
            count,
            seed,
            out,
        } => {
            let s: Strategy = strategy.parse().map_err(config_error)?;
            for f in mask_debug(s, resolution, count, seed, &out)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
