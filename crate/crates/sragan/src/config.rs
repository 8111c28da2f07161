//! Flat `section.key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so a
//! config file only lists what it changes. Unknown keys are an error.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sragan_core::{Ablation, DiscriminatorConfig, GeneratorConfig, TrainConfig};

use crate::error::{AppError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaliencyBackend {
    Synthetic,
    Pretrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractorBackend {
    Toy,
    InceptionAdapter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub resize_to: u32,
    /// Seed of the 4:1 split; training randomness uses `trainer.seed`.
    pub data_seed: u64,
    /// Read `<root>/X` and `<root>/Y` and split them 4:1 instead of using the
    /// `trainX`/`testX` folder convention.
    pub data_split: bool,
    pub saliency_backend: SaliencyBackend,
    pub saliency_weights: Option<PathBuf>,
    pub gen: GeneratorConfig,
    pub disc: DiscriminatorConfig,
    pub trainer: TrainConfig,
    pub checkpoint_every: usize,
    pub extractor: ExtractorBackend,
    pub extractor_weights: Option<PathBuf>,
    pub run_name: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            resize_to: 256,
            data_seed: 0,
            data_split: false,
            saliency_backend: SaliencyBackend::Synthetic,
            saliency_weights: None,
            gen: GeneratorConfig::default(),
            disc: DiscriminatorConfig::default(),
            trainer: TrainConfig::default(),
            checkpoint_every: 10,
            extractor: ExtractorBackend::Toy,
            extractor_weights: None,
            run_name: "default".into(),
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("data.root", "dataset root holding trainX/trainY/testX/testY"),
    ("data.resize_to", "square side images are resized to"),
    ("data.seed", "seed of the 4:1 train/test split"),
    ("data.split", "split <root>/X and <root>/Y 4:1 instead of using train/test folders"),
    ("data.batch_size", "images per domain per iteration"),
    ("saliency.backend", "synthetic | pretrained"),
    ("saliency.weights_path", "exported detector weights (pretrained backend)"),
    ("saliency.tau", "soft-threshold temperature in the structure loss"),
    ("gen.base_channels", "generator channels after the stem"),
    ("gen.n_bottleneck", "number of bottleneck blocks"),
    ("gen.sn_positions", "comma list of bottleneck indices that use SANorm"),
    ("gen.sanorm_hidden", "hidden channels of the SANorm branch"),
    ("disc.base_channels", "discriminator channels of the first block"),
    ("trainer.epochs", "training epochs"),
    ("trainer.lr", "initial Adam learning rate"),
    ("trainer.beta1", "Adam beta1"),
    ("trainer.beta2", "Adam beta2"),
    ("trainer.decay_start_epoch", "first epoch of the linear decay"),
    ("trainer.lambda1", "adversarial weight"),
    ("trainer.lambda2", "cycle weight"),
    ("trainer.lambda3", "saliency structure weight"),
    ("trainer.ablation", "none or comma list of no_siou, smse, no_sanorm, no_saadv"),
    ("trainer.seed", "seed for init, sampling and the replay pools"),
    ("trainer.pool_size", "replay pool capacity (0 disables)"),
    ("trainer.checkpoint_every", "epochs between numbered checkpoints"),
    ("eval.extractor", "toy | inception-adapter"),
    ("eval.extractor_weights", "exported feature network (inception-adapter)"),
    ("run.name", "run directory name under the runs root"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| AppError::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Defaults, then the file at `path` (if any), then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => AppError::MissingPath(path.to_path_buf()),
                _ => AppError::io(path, e),
            })?;
            cfg.apply_text(&text)?;
        }
        for item in overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("override `{item}` is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.trainer;
        match key {
            "data.root" => self.data_root = PathBuf::from(value),
            "data.resize_to" => self.resize_to = parse(key, value)?,
            "data.seed" => self.data_seed = parse(key, value)?,
            "data.split" => self.data_split = parse(key, value)?,
            "data.batch_size" => t.batch_size = parse(key, value)?,
            "saliency.backend" => {
                self.saliency_backend = match value {
                    "synthetic" => SaliencyBackend::Synthetic,
                    "pretrained" => SaliencyBackend::Pretrained,
                    _ => return Err(AppError::Config(format!("{key}: unknown backend `{value}`"))),
                }
            }
            "saliency.weights_path" => self.saliency_weights = opt_path(value),
            "saliency.tau" => t.tau = parse(key, value)?,
            "gen.base_channels" => self.gen.base_channels = parse(key, value)?,
            "gen.n_bottleneck" => self.gen.n_bottleneck = parse(key, value)?,
            "gen.sn_positions" => {
                self.gen.sn_positions = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "gen.sanorm_hidden" => self.gen.sanorm_hidden = parse(key, value)?,
            "disc.base_channels" => self.disc.base_channels = parse(key, value)?,
            "trainer.epochs" => t.epochs = parse(key, value)?,
            "trainer.lr" => t.lr = parse(key, value)?,
            "trainer.beta1" => t.adam_beta1 = parse(key, value)?,
            "trainer.beta2" => t.adam_beta2 = parse(key, value)?,
            "trainer.decay_start_epoch" => t.decay_start_epoch = parse(key, value)?,
            "trainer.lambda1" => t.weights.lambda1 = parse(key, value)?,
            "trainer.lambda2" => t.weights.lambda2 = parse(key, value)?,
            "trainer.lambda3" => t.weights.lambda3 = parse(key, value)?,
            "trainer.ablation" => {
                t.ablation = Ablation::parse(value).map_err(|e| AppError::Config(format!("{key}: {e}")))?
            }
            "trainer.seed" => t.seed = parse(key, value)?,
            "trainer.pool_size" => t.pool_size = parse(key, value)?,
            "trainer.checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "eval.extractor" => {
                self.extractor = match value {
                    "toy" => ExtractorBackend::Toy,
                    "inception-adapter" => ExtractorBackend::InceptionAdapter,
                    _ => return Err(AppError::Config(format!("{key}: unknown extractor `{value}`"))),
                }
            }
            "eval.extractor_weights" => self.extractor_weights = opt_path(value),
            "run.name" => self.run_name = value.to_string(),
            _ => return Err(AppError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.trainer;
        Some(match key {
            "data.root" => self.data_root.display().to_string(),
            "data.resize_to" => self.resize_to.to_string(),
            "data.seed" => self.data_seed.to_string(),
            "data.split" => self.data_split.to_string(),
            "data.batch_size" => t.batch_size.to_string(),
            "saliency.backend" => match self.saliency_backend {
                SaliencyBackend::Synthetic => "synthetic".into(),
                SaliencyBackend::Pretrained => "pretrained".into(),
            },
            "saliency.weights_path" => path_text(&self.saliency_weights),
            "saliency.tau" => t.tau.to_string(),
            "gen.base_channels" => self.gen.base_channels.to_string(),
            "gen.n_bottleneck" => self.gen.n_bottleneck.to_string(),
            "gen.sn_positions" => {
                self.gen.sn_positions.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
            }
            "gen.sanorm_hidden" => self.gen.sanorm_hidden.to_string(),
            "disc.base_channels" => self.disc.base_channels.to_string(),
            "trainer.epochs" => t.epochs.to_string(),
            "trainer.lr" => t.lr.to_string(),
            "trainer.beta1" => t.adam_beta1.to_string(),
            "trainer.beta2" => t.adam_beta2.to_string(),
            "trainer.decay_start_epoch" => t.decay_start_epoch.to_string(),
            "trainer.lambda1" => t.weights.lambda1.to_string(),
            "trainer.lambda2" => t.weights.lambda2.to_string(),
            "trainer.lambda3" => t.weights.lambda3.to_string(),
            "trainer.ablation" => {
                let names = t.ablation.names();
                if names.is_empty() { "none".into() } else { names.join(",") }
            }
            "trainer.seed" => t.seed.to_string(),
            "trainer.pool_size" => t.pool_size.to_string(),
            "trainer.checkpoint_every" => self.checkpoint_every.to_string(),
            "eval.extractor" => match self.extractor {
                ExtractorBackend::Toy => "toy".into(),
                ExtractorBackend::InceptionAdapter => "inception-adapter".into(),
            },
            "eval.extractor_weights" => path_text(&self.extractor_weights),
            "run.name" => self.run_name.clone(),
            _ => return None,
        })
    }

    /// All keys, one `key = value` line each; parses back to `self`.
    pub fn snapshot(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: sragan_core::Error| AppError::Config(e.to_string());
        self.trainer.validate().map_err(cfg_err)?;
        self.gen.validate().map_err(cfg_err)?;
        if self.resize_to == 0 || self.resize_to % 16 != 0 {
            return Err(AppError::Config(format!("data.resize_to must be a positive multiple of 16, got {}", self.resize_to)));
        }
        if self.disc.base_channels == 0 {
            return Err(AppError::Config("disc.base_channels must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(AppError::Config("trainer.checkpoint_every must be positive".into()));
        }
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(AppError::Config(format!("run.name `{}` is not a plain directory name", self.run_name)));
        }
        Ok(())
    }
}

/// Table of keys and defaults for `--help`.
pub fn keys_help() -> String {
    let d = RunConfig::default();
    let mut out = String::from("Config keys (default in brackets):\n");
    for (k, help) in KEYS {
        out.push_str(&format!("  {k:<28} {help} [{}]\n", d.get(k).unwrap_or_default()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("trainer.ablation", "smse,no_saadv").unwrap();
        cfg.set("gen.sn_positions", "1, 3").unwrap();
        cfg.set("trainer.lr", "0.00015").unwrap();
        cfg.set("saliency.weights_path", "w/s.bin").unwrap();
        assert_eq!(RunConfig::parse_text(&cfg.snapshot()).unwrap(), cfg);
        assert_eq!(RunConfig::parse_text(&RunConfig::default().snapshot()).unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_is_settable() {
        let d = RunConfig::default();
        for (k, _) in KEYS {
            let mut c = d.clone();
            c.set(k, &d.get(k).unwrap()).unwrap();
            assert_eq!(c, d, "{k}");
        }
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(RunConfig::parse_text("trainer.lrr = 1"), Err(AppError::Config(_))));
        assert!(matches!(RunConfig::parse_text("trainer.lr"), Err(AppError::Config(_))));
        assert!(matches!(RunConfig::parse_text("trainer.epochs = x"), Err(AppError::Config(_))));
        assert!(matches!(RunConfig::parse_text("trainer.decay_start_epoch = 300"), Err(AppError::Config(_))));
        assert!(matches!(RunConfig::parse_text("trainer.ablation = no_siou,smse"), Err(AppError::Config(_))));
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = RunConfig::parse_text("# smoke\ntrainer.epochs = 4 # short\n\ntrainer.decay_start_epoch=2").unwrap();
        assert_eq!(cfg.trainer.epochs, 4);
        let cfg = RunConfig::load(None, &["trainer.seed=7".into(), "trainer.seed = 9".into()]).unwrap();
        assert_eq!(cfg.trainer.seed, 9);
        assert!(keys_help().lines().count() > KEYS.len());
    }
}
