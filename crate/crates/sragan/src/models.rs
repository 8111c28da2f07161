//! Frozen detector and feature-extractor construction from config.
//!
//! Exported networks are bincode-encoded [`FrozenConvNet`] files.

use std::path::Path;

use sragan_core::saliency::FrozenConvNet;
use sragan_core::{FeatureExtractor, SaliencyDetector};

use crate::config::{ExtractorBackend, RunConfig, SaliencyBackend};
use crate::error::{AppError, Result};

pub fn load_frozen_net(path: &Path) -> Result<FrozenConvNet> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => AppError::MissingPath(path.to_path_buf()),
        _ => AppError::io(path, e),
    })?;
    bincode::deserialize(&bytes).map_err(|e| AppError::Format(format!("{}: not an exported network: {e}", path.display())))
}

pub fn save_frozen_net(net: &FrozenConvNet, path: &Path) -> Result<()> {
    let bytes = bincode::serialize(net).map_err(|e| AppError::Runtime(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn detector(cfg: &RunConfig) -> Result<SaliencyDetector> {
    match cfg.saliency_backend {
        SaliencyBackend::Synthetic => Ok(SaliencyDetector::Synthetic),
        SaliencyBackend::Pretrained => {
            let path = cfg.saliency_weights.as_deref().ok_or_else(|| {
                AppError::Config("saliency.backend = pretrained needs saliency.weights_path".into())
            })?;
            Ok(SaliencyDetector::pretrained(load_frozen_net(path)?)?)
        }
    }
}

pub fn extractor(cfg: &RunConfig) -> Result<FeatureExtractor> {
    match cfg.extractor {
        ExtractorBackend::Toy => Ok(FeatureExtractor::Toy),
        ExtractorBackend::InceptionAdapter => {
            let path = cfg.extractor_weights.as_deref().ok_or_else(|| {
                AppError::Config("eval.extractor = inception-adapter needs eval.extractor_weights".into())
            })?;
            Ok(FeatureExtractor::adapter(load_frozen_net(path)?)?)
        }
    }
}
