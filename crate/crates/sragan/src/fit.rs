//! Epoch loop, metrics log and checkpoint schedule.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sragan_core::{Error as CoreError, LossReport, TrainState};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::DomainDataset;
use crate::error::{AppError, Result};
use crate::models;

pub const RUNS_DIR_ENV: &str = "SRAGAN_RUNS_DIR";

/// `$SRAGAN_RUNS_DIR`, or `runs` in the working directory.
pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// `<runs>/<name>/{checkpoints, metrics.log, config.snapshot, reports}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(runs_root: &Path, name: &str) -> Self {
        Self { root: runs_root.join(name) }
    }

    /// The run directory a checkpoint file lives in.
    pub fn of_checkpoint(path: &Path) -> Option<Self> {
        let root = path.parent()?.parent()?;
        Some(Self { root: root.to_path_buf() })
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn metrics_log(&self) -> PathBuf {
        self.root.join("metrics.log")
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn latest(&self) -> PathBuf {
        self.checkpoints().join("latest.ckpt")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch_{epoch:04}.ckpt"))
    }

    pub fn create(&self) -> Result<()> {
        for dir in [self.checkpoints(), self.reports()] {
            std::fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
        }
        Ok(())
    }
}

/// One line of `metrics.log`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based global iteration.
    pub iteration: u64,
    pub epoch: usize,
    pub lr: f64,
    pub adv_g_xy: f64,
    pub adv_g_yx: f64,
    pub adv_d_xy: f64,
    pub adv_d_yx: f64,
    pub cycle: f64,
    pub siou: f64,
    pub total: f64,
}

impl MetricsRecord {
    fn new(iteration: u64, epoch: usize, lr: f64, r: &LossReport) -> Self {
        Self {
            iteration,
            epoch,
            lr,
            adv_g_xy: r.adv_g_xy,
            adv_g_yx: r.adv_g_yx,
            adv_d_xy: r.adv_d_xy,
            adv_d_yx: r.adv_d_yx,
            cycle: r.cycle,
            siou: r.siou,
            total: r.total,
        }
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            let line = line.map_err(|e| AppError::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Drops records past `iteration` so a resumed run continues a clean log.
fn truncate_metrics(path: &Path, iteration: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<_> = read_metrics(path)?.into_iter().filter(|r| r.iteration <= iteration).collect();
    let mut w = BufWriter::new(File::create(path).map_err(|e| AppError::io(path, e))?);
    for r in kept {
        write_record(&mut w, &r, path)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn write_record(w: &mut impl Write, r: &MetricsRecord, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, r).map_err(|e| AppError::Runtime(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| AppError::io(path, e))
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    iteration: u64,
    epoch: usize,
    component: &'a str,
    value: String,
    x_ids: Vec<&'a str>,
    y_ids: Vec<&'a str>,
}

/// Trains from scratch, or from `latest` when `resume` is set and one
/// exists. Returns the path of the `latest` checkpoint.
pub fn fit(cfg: &RunConfig, ds_x: &DomainDataset, ds_y: &DomainDataset, run: &RunDir, resume: bool) -> Result<PathBuf> {
    cfg.validate()?;
    run.create()?;
    let snap = run.config_snapshot();
    std::fs::write(&snap, cfg.snapshot()).map_err(|e| AppError::io(&snap, e))?;
    let det = models::detector(cfg)?;

    let mut state = if resume && run.latest().exists() {
        let ck = Checkpoint::load(&run.latest())?;
        if ck.config != *cfg {
            return Err(AppError::Config(format!(
                "cannot resume {}: config differs from the checkpoint's",
                run.root.display()
            )));
        }
        log::info!("resuming at epoch {} (iteration {})", ck.state.epoch, ck.state.iteration);
        truncate_metrics(&run.metrics_log(), ck.state.iteration)?;
        ck.state
    } else {
        let log = run.metrics_log();
        File::create(&log).map_err(|e| AppError::io(&log, e))?;
        TrainState::new(cfg.trainer.clone(), cfg.gen.clone(), cfg.disc.clone(), ds_x.len(), ds_y.len())?
    };

    let log_path = run.metrics_log();
    let log_file = std::fs::OpenOptions::new().append(true).open(&log_path).map_err(|e| AppError::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let epochs = cfg.trainer.epochs;

    while state.epoch < epochs {
        let lr = state.current_lr()?;
        let mut cycle_sum = 0.0;
        let batches = state.sampler.next_epoch();
        let n = batches.len();
        for (xs, ys) in batches {
            let x = ds_x.batch(&xs)?;
            let y = ds_y.batch(&ys)?;
            let report = match state.train_step(&x, &y, &det) {
                Ok(r) => r,
                Err(CoreError::NonFinite { component, value }) => {
                    log.flush().map_err(|e| AppError::io(&log_path, e))?;
                    let dump = NonFiniteDump {
                        iteration: state.iteration + 1,
                        epoch: state.epoch,
                        component,
                        value: value.to_string(),
                        x_ids: xs.iter().map(|&i| ds_x.image_ids[i].as_str()).collect(),
                        y_ids: ys.iter().map(|&i| ds_y.image_ids[i].as_str()).collect(),
                    };
                    let path = run.reports().join("nonfinite.json");
                    let text = serde_json::to_string_pretty(&dump).map_err(|e| AppError::Runtime(e.to_string()))?;
                    std::fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
                    return Err(AppError::Runtime(format!(
                        "non-finite {component} = {value} at iteration {}; details in {}",
                        dump.iteration,
                        path.display()
                    )));
                }
                Err(e) => return Err(e.into()),
            };
            cycle_sum += report.cycle;
            write_record(&mut log, &MetricsRecord::new(state.iteration, state.epoch, lr, &report), &log_path)?;
        }
        log.flush().map_err(|e| AppError::io(&log_path, e))?;
        state.epoch += 1;
        log::info!("epoch {}/{epochs}: lr {lr:e}, mean cycle {:.5}", state.epoch, cycle_sum / n as f64);

        let ck = Checkpoint::new(cfg, state);
        ck.save(&run.latest())?;
        if ck.state.epoch % cfg.checkpoint_every == 0 || ck.state.epoch == epochs {
            ck.save(&run.epoch_checkpoint(ck.state.epoch))?;
        }
        state = ck.state;
    }
    Ok(run.latest())
}
