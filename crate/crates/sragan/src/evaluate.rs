//! Stylize a test set and score it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sragan_core::metrics::saliency_ious;
use sragan_core::{fid, fit_gaussian, to_unit_range, FeatureExtractor, GeneratorNet, SaliencyDetector, Tensor};

use crate::checkpoint::{file_id, Checkpoint};
use crate::config::RunConfig;
use crate::data::DomainDataset;
use crate::error::{AppError, Result};
use crate::models;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Score `G(test)` against the real set.
    Standard,
    /// Use the test images themselves as the stylizations.
    Identity,
    /// Score the real set against itself for FID.
    SelfFid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid: f64,
    pub saliency_miou: f64,
    pub n_generated: usize,
    pub n_real: usize,
    pub extractor: String,
    pub seed: u64,
    pub checkpoint_id: String,
    pub mode: EvalMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    /// `(image id, IOU)` per test image.
    pub per_image: Vec<(String, f64)>,
}

/// `G(img, S(img))` for an image batch in `[-1, 1]`.
pub fn stylize(g: &GeneratorNet, det: &SaliencyDetector, img: &Tensor) -> Result<Tensor> {
    let s = det.detect(&to_unit_range(img))?;
    Ok(g.generate(img, &s)?)
}

fn features(ex: &FeatureExtractor, images: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for img in images {
        rows.extend(ex.extract(img)?);
    }
    Ok(rows)
}

/// FID between the feature Gaussians of `generated` and `real`.
pub fn fid_between(generated: &[Tensor], real: &[Tensor], ex: &FeatureExtractor) -> Result<f64> {
    if generated.len() < 2 || real.len() < 2 {
        return Err(AppError::Config(format!(
            "FID needs at least 2 images per side, got {} generated and {} real",
            generated.len(),
            real.len()
        )));
    }
    let g = fit_gaussian(&features(ex, generated)?)?;
    let r = fit_gaussian(&features(ex, real)?)?;
    Ok(fid(&r, &g)?)
}

pub fn evaluate(
    checkpoint: &Path,
    cfg: &RunConfig,
    test: &DomainDataset,
    real: &DomainDataset,
    mode: EvalMode,
) -> Result<Evaluation> {
    let ck = Checkpoint::load(checkpoint)?;
    let checkpoint_id = file_id(checkpoint)?;
    let det = models::detector(cfg)?;
    let ex = models::extractor(cfg)?;
    let stylized = match mode {
        EvalMode::Identity => test.images.clone(),
        _ => test.images.iter().map(|img| stylize(&ck.state.g, &det, img)).collect::<Result<_>>()?,
    };
    let generated = if mode == EvalMode::SelfFid { &real.images } else { &stylized };
    let fid_value = fid_between(generated, &real.images, &ex)?;
    let ious = saliency_ious(&test.images, &stylized, &det)?;
    let miou = ious.iter().sum::<f64>() / ious.len() as f64;
    Ok(Evaluation {
        report: EvalReport {
            fid: fid_value,
            saliency_miou: miou,
            n_generated: generated.len(),
            n_real: real.len(),
            extractor: ex.name().into(),
            seed: ck.seed,
            checkpoint_id,
            mode,
        },
        per_image: test.image_ids.iter().cloned().zip(ious).collect(),
    })
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(report).map_err(|e| AppError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| AppError::io(path, e))
}

pub fn write_iou_csv(per_image: &[(String, f64)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| AppError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(["image", "iou"]).map_err(csv_err)?;
    for (id, iou) in per_image {
        w.write_record([id.as_str(), &iou.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}
