//! Image folders as in-memory tensors.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageReader, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sragan_core::{Tensor, UnpairedSampler};

use crate::error::{require_exists, AppError, Result};

/// File extensions accepted by [`load_dataset`].
pub const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// An image folder loaded and resized up front.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub root: PathBuf,
    /// File names, sorted.
    pub image_ids: Vec<String>,
    pub resize_to: u32,
    /// One `(1, 3, resize_to, resize_to)` tensor in `[-1, 1]` per id.
    pub images: Vec<Tensor>,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stacks the images at `indices` into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let items: Vec<Tensor> = indices.iter().map(|&i| self.images[i].clone()).collect();
        Ok(Tensor::stack_batch(&items)?)
    }

    /// Keeps only the listed ids, in the given order.
    pub fn subset(&self, ids: &[String]) -> Self {
        let (image_ids, images) = ids
            .iter()
            .filter_map(|id| {
                let i = self.image_ids.iter().position(|x| x == id)?;
                Some((id.clone(), self.images[i].clone()))
            })
            .unzip();
        Self { root: self.root.clone(), image_ids, resize_to: self.resize_to, images }
    }
}

pub fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Decodes one PNG/JPEG, replicates gray to RGB, resizes bicubically to
/// `size × size` and maps to `[-1, 1]`.
pub fn load_image(path: &Path, size: u32) -> Result<Tensor> {
    if !has_image_extension(path) {
        return Err(AppError::Format(format!("{}: only PNG and JPEG are supported", path.display())));
    }
    let img = ImageReader::open(path)
        .map_err(|e| AppError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| AppError::io(path, e))?
        .decode()
        .map_err(|e| AppError::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let img = if img.dimensions() == (size, size) {
        img
    } else {
        image::imageops::resize(&img, size, size, FilterType::CatmullRom)
    };
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f64 / 127.5 - 1.0
    })
}

/// First item of a `(B, 3, H, W)` tensor in `[-1, 1]` as 8-bit RGB.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (_, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(AppError::Format(format!("expected 3 channels, got {c}")));
    }
    let d = t.data();
    let mut buf = vec![0u8; h * w * 3];
    for ch in 0..3 {
        for p in 0..h * w {
            let v = (d[ch * h * w + p] + 1.0) * 127.5;
            buf[p * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    RgbImage::from_raw(w as u32, h as u32, buf).ok_or_else(|| AppError::Format("bad image buffer".into()))
}

pub fn save_png(t: &Tensor, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    tensor_to_rgb(t)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))
}

/// Image files directly under `root` with a supported extension, sorted.
/// Other files are skipped with a warning.
pub fn list_images(root: &Path) -> Result<Vec<String>> {
    require_exists(root)?;
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| AppError::io(root, e))? {
        let entry = entry.map_err(|e| AppError::io(root, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        if has_image_extension(&path) {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        } else {
            log::warn!("skipping {}: not a PNG or JPEG file", path.display());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_dataset(root: &Path, resize_to: u32) -> Result<DomainDataset> {
    let ids = list_images(root)?;
    if ids.is_empty() {
        return Err(AppError::Config(format!("{}: no PNG or JPEG images", root.display())));
    }
    let mut image_ids = Vec::new();
    let mut images = Vec::new();
    for id in ids {
        match load_image(&root.join(&id), resize_to) {
            Ok(t) => {
                image_ids.push(id);
                images.push(t);
            }
            Err(e) => log::warn!("skipping undecodable image: {e}"),
        }
    }
    if images.is_empty() {
        return Err(AppError::Runtime(format!("{}: no image could be decoded", root.display())));
    }
    Ok(DomainDataset { root: root.to_path_buf(), image_ids, resize_to, images })
}

/// Deterministic 4:1 partition of `ids` into `(train, test)`. Each part keeps
/// sorted order; at least one item lands in test when there are two or more.
pub fn split_train_test(ids: &[String], seed: u64) -> (Vec<String>, Vec<String>) {
    let mut sorted = ids.to_vec();
    sorted.sort();
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = if sorted.len() >= 2 { (sorted.len() / 5).max(1) } else { 0 };
    let mut is_test = vec![false; sorted.len()];
    order[..n_test].iter().for_each(|&i| is_test[i] = true);
    let (test, train): (Vec<_>, Vec<_>) = sorted.into_iter().zip(is_test).partition(|(_, t)| *t);
    (train.into_iter().map(|p| p.0).collect(), test.into_iter().map(|p| p.0).collect())
}

/// One step of unpaired training data.
#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedBatch {
    pub x: Tensor,
    pub y: Tensor,
}

/// Seeded stream of unpaired batches, epoch after epoch.
pub struct UnpairedBatches<'a> {
    dx: &'a DomainDataset,
    dy: &'a DomainDataset,
    sampler: UnpairedSampler,
    pending: std::vec::IntoIter<(Vec<usize>, Vec<usize>)>,
}

impl Iterator for UnpairedBatches<'_> {
    type Item = UnpairedBatch;

    fn next(&mut self) -> Option<UnpairedBatch> {
        let (xs, ys) = match self.pending.next() {
            Some(p) => p,
            None => {
                self.pending = self.sampler.next_epoch().into_iter();
                self.pending.next()?
            }
        };
        Some(UnpairedBatch { x: self.dx.batch(&xs).ok()?, y: self.dy.batch(&ys).ok()? })
    }
}

/// Unpaired batches drawn with the same sampler the trainer uses.
pub fn sample_unpaired<'a>(
    dx: &'a DomainDataset,
    dy: &'a DomainDataset,
    batch: usize,
    seed: u64,
) -> Result<UnpairedBatches<'a>> {
    if dx.is_empty() || dy.is_empty() {
        return Err(AppError::Config("unpaired sampling needs two non-empty domains".into()));
    }
    let sampler = UnpairedSampler::new(dx.len(), dy.len(), batch, seed)?;
    Ok(UnpairedBatches { dx, dy, sampler, pending: Vec::new().into_iter() })
}

/// Train and test folders of one domain under `cfg.data_root`.
pub fn domain_dirs(root: &Path, domain: char) -> (PathBuf, PathBuf) {
    (root.join(format!("train{domain}")), root.join(format!("test{domain}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{i:03}.png")).collect()
    }

    #[test]
    fn split_is_four_to_one_and_deterministic() {
        let (tr, te) = split_train_test(&ids(10), 3);
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split_train_test(&ids(10), 3), (tr.clone(), te.clone()));
        let mut shuffled = ids(10);
        shuffled.reverse();
        assert_eq!(split_train_test(&shuffled, 3), (tr, te));
        assert_eq!(split_train_test(&ids(1), 0).1.len(), 0);
    }

    #[test]
    fn pixel_round_trip() {
        let img = RgbImage::from_fn(4, 3, |x, y| image::Rgb([x as u8 * 60, y as u8 * 100, 255]));
        let t = rgb_to_tensor(&img);
        assert_eq!(t.shape(), &[1, 3, 3, 4]);
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(tensor_to_rgb(&t).unwrap(), img);
    }
}
