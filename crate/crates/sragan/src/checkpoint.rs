//! Single-file checkpoints: all four networks, both optimizers, pools,
//! sampler state and the config they were trained with.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sragan_core::TrainState;

use crate::config::RunConfig;
use crate::error::{require_exists, AppError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    /// `config.snapshot()` at save time.
    pub config_snapshot: String,
    pub seed: u64,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(config: &RunConfig, state: TrainState) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config_snapshot: config.snapshot(),
            seed: config.trainer.seed,
            config: config.clone(),
            state,
        }
    }

    /// Writes via a temporary sibling and renames into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let file = std::fs::File::create(&tmp).map_err(|e| AppError::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        bincode::serialize_into(&mut w, self).map_err(|e| AppError::Runtime(format!("{}: {e}", tmp.display())))?;
        w.flush().map_err(|e| AppError::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        require_exists(path)?;
        let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
        let ck: Self = bincode::deserialize_from(BufReader::new(file))
            .map_err(|e| AppError::Format(format!("{}: not a checkpoint: {e}", path.display())))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(AppError::Format(format!(
                "{}: checkpoint format {} (expected {FORMAT_VERSION})",
                path.display(),
                ck.format_version
            )));
        }
        Ok(ck)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_id(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
