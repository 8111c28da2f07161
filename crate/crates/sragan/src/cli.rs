use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{keys_help, RunConfig};
use crate::data::{domain_dirs, load_dataset, split_train_test, DomainDataset};
use crate::error::{require_exists, Result};
use crate::evaluate::{evaluate, write_iou_csv, write_report, EvalMode};
use crate::fit::{fit, runs_root, RunDir};
use crate::{checkpoint::Checkpoint, infer, synthetic};

#[derive(Debug, Parser)]
#[command(name = "sragan", version, about = "Saliency-regularized unpaired image translation", after_help = keys_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train G, F, D_X and D_Y; writes under $SRAGAN_RUNS_DIR/<run.name>.
    #[command(after_help = keys_help())]
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Continue from the run's latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Stylize an image or a folder of images.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// FID and Saliency MIOU of a checkpoint's X→Y generator.
    #[command(after_help = keys_help())]
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source-domain test images.
        #[arg(long)]
        test_dir: PathBuf,
        /// Real target-domain images.
        #[arg(long)]
        real_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalMode::Standard)]
        mode: EvalMode,
        /// Report path; defaults to <run>/reports/eval_<mode>.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-image IOUs as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Override saliency.* or eval.* keys of the checkpoint config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Write the synthetic smoke dataset and a matching config file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        n_train: usize,
        #[arg(long, default_value_t = 4)]
        n_test: usize,
        #[arg(long, default_value_t = 64)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Training domains as configured: `train{X,Y}`, or the train part of a
/// seeded 4:1 split of `{X,Y}`.
pub fn training_data(cfg: &RunConfig) -> Result<(DomainDataset, DomainDataset)> {
    let load = |letter: char| -> Result<DomainDataset> {
        if cfg.data_split {
            let dir = cfg.data_root.join(letter.to_string());
            require_exists(&dir)?;
            let ds = load_dataset(&dir, cfg.resize_to)?;
            let (train, _) = split_train_test(&ds.image_ids, cfg.data_seed);
            Ok(ds.subset(&train))
        } else {
            let (train, _) = domain_dirs(&cfg.data_root, letter);
            require_exists(&train)?;
            load_dataset(&train, cfg.resize_to)
        }
    };
    Ok((load('X')?, load('Y')?))
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, sets, resume } => {
            let cfg = RunConfig::load(config.as_deref(), &sets)?;
            let (dx, dy) = training_data(&cfg)?;
            let run = RunDir::new(&runs_root(), &cfg.run_name);
            let latest = fit(&cfg, &dx, &dy, &run, resume)?;
            println!("{}", latest.display());
        }
        Command::Infer { checkpoint, input, output } => {
            for path in infer::infer(&checkpoint, &input, &output)? {
                println!("{}", path.display());
            }
        }
        Command::Evaluate { checkpoint, test_dir, real_dir, mode, out, csv, sets } => {
            let mut cfg = Checkpoint::load(&checkpoint)?.config;
            for item in &sets {
                let overrides = RunConfig::load(None, std::slice::from_ref(item))?;
                let key = item.split_once('=').map(|(k, _)| k.trim()).unwrap_or_default();
                cfg.set(key, &overrides.get(key).unwrap_or_default())?;
            }
            let test = load_dataset(&test_dir, cfg.resize_to)?;
            let real = load_dataset(&real_dir, cfg.resize_to)?;
            let ev = evaluate(&checkpoint, &cfg, &test, &real, mode)?;
            let out = out.unwrap_or_else(|| default_report_path(&checkpoint, mode));
            write_report(&ev.report, &out)?;
            if let Some(csv) = csv {
                write_iou_csv(&ev.per_image, &csv)?;
            }
            println!("fid = {}", ev.report.fid);
            println!("saliency_miou = {}", ev.report.saliency_miou);
            println!("report: {}", out.display());
        }
        Command::Synth { out, n_train, n_test, size, seed } => {
            synthetic::write_dataset(&out, n_train, n_test, size, seed)?;
            let mut cfg = synthetic::smoke_config(&out);
            cfg.resize_to = size;
            let path = out.join("smoke.cfg");
            std::fs::write(&path, cfg.snapshot()).map_err(|e| crate::error::AppError::io(&path, e))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn default_report_path(checkpoint: &Path, mode: EvalMode) -> PathBuf {
    let name = match mode {
        EvalMode::Standard => "eval_standard.json",
        EvalMode::Identity => "eval_identity.json",
        EvalMode::SelfFid => "eval_self_fid.json",
    };
    match RunDir::of_checkpoint(checkpoint) {
        Some(run) => run.reports().join(name),
        None => PathBuf::from(name),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
