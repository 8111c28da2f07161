use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::data::{list_images, load_image, save_png};
use crate::error::{require_exists, AppError, Result};
use crate::evaluate::stylize;
use crate::models;

fn png_name(id: &str) -> String {
    let stem = Path::new(id).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| id.into());
    format!("{stem}.png")
}

/// Stylizes one image file or every image in a folder with the `G` of a
/// checkpoint, at the checkpoint's training resolution.
///
/// A file input writes to `output` when it ends in `.png`, otherwise into
/// the folder `output`. Folder inputs keep their file stems. Returns the
/// written paths.
pub fn infer(checkpoint: &Path, input: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    require_exists(input)?;
    let ck = Checkpoint::load(checkpoint)?;
    let det = models::detector(&ck.config)?;
    let size = ck.config.resize_to;

    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        list_images(input)?.into_iter().map(|id| (input.join(&id), output.join(png_name(&id)))).collect()
    } else {
        let id = input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let is_png_target = output.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let target = if is_png_target { output.to_path_buf() } else { output.join(png_name(&id)) };
        vec![(input.to_path_buf(), target)]
    };

    let mut written = Vec::new();
    for (src, dst) in &jobs {
        let img = match load_image(src, size) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", src.display());
                continue;
            }
        };
        save_png(&stylize(&ck.state.g, &det, &img)?, dst)?;
        written.push(dst.clone());
    }
    if written.is_empty() {
        return Err(AppError::Runtime(format!("{}: no image could be stylized", input.display())));
    }
    Ok(written)
}
