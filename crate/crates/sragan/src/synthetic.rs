//! Bundled synthetic photo/painting task for smoke runs.
//!
//! Domain X holds saturated colour disks on a dark noisy ground. Domain Y
//! holds pale gray disks with a dark ink rim on a mid-gray ground with
//! horizontal brush texture. The disk is the salient object in both.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{domain_dirs, save_png, rgb_to_tensor};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Photo,
    Painting,
}

fn disk(rng: &mut ChaCha8Rng, size: u32) -> (f64, f64, f64) {
    let s = size as f64;
    let r = rng.random_range(0.18..0.28) * s;
    let cy = rng.random_range(r + 2.0..s - r - 2.0);
    let cx = rng.random_range(r + 2.0..s - r - 2.0);
    (cy, cx, r)
}

pub fn image(domain: Domain, size: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let (cy, cx, r) = disk(rng, size);
    match domain {
        Domain::Photo => {
            let hue = [rng.random_range(150.0..255.0), rng.random_range(40.0..255.0), rng.random_range(40.0..200.0)];
            let mut img = RgbImage::new(size, size);
            for (x, y, px) in img.enumerate_pixels_mut() {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let n: f64 = rng.random_range(-12.0..12.0);
                *px = if d < r {
                    Rgb(hue.map(|c| (c + n).clamp(0.0, 255.0) as u8))
                } else {
                    let g = (35.0 + n).clamp(0.0, 255.0) as u8;
                    Rgb([g, g, g.saturating_add(8)])
                };
            }
            img
        }
        Domain::Painting => {
            let phase = rng.random_range(0.0..6.28);
            let freq = rng.random_range(0.3..0.6);
            let mut img = RgbImage::new(size, size);
            for (x, y, px) in img.enumerate_pixels_mut() {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let n: f64 = rng.random_range(-6.0..6.0);
                let v = if d < r - 2.0 {
                    225.0 + n
                } else if d < r {
                    40.0 + n
                } else {
                    95.0 + 18.0 * (y as f64 * freq + phase).sin() + n
                };
                let g = v.clamp(0.0, 255.0) as u8;
                *px = Rgb([g, g, g]);
            }
            img
        }
    }
}

/// `n` images of one domain from a seeded stream.
pub fn images(domain: Domain, n: usize, size: u32, seed: u64) -> Vec<RgbImage> {
    let stream = match domain {
        Domain::Photo => 0,
        Domain::Painting => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| image(domain, size, &mut rng)).collect()
}

/// Writes `trainX/trainY` with `n_train` images each and `testX/testY` with
/// `n_test` each under `root`.
pub fn write_dataset(root: &Path, n_train: usize, n_test: usize, size: u32, seed: u64) -> Result<()> {
    for (domain, letter) in [(Domain::Photo, 'X'), (Domain::Painting, 'Y')] {
        let all = images(domain, n_train + n_test, size, seed);
        let (train_dir, test_dir) = domain_dirs(root, letter);
        for (i, img) in all.iter().enumerate() {
            let (dir, idx) = if i < n_train { (&train_dir, i) } else { (&test_dir, i - n_train) };
            save_png(&rgb_to_tensor(img), &dir.join(format!("{idx:03}.png")))?;
        }
    }
    Ok(())
}

/// Small-network config for the synthetic task at 64×64.
pub fn smoke_config(data_root: &Path) -> RunConfig {
    let mut c = RunConfig { data_root: data_root.to_path_buf(), resize_to: 64, run_name: "smoke".into(), ..RunConfig::default() };
    c.gen.base_channels = 8;
    c.gen.n_bottleneck = 3;
    c.gen.sn_positions = vec![0, 2];
    c.gen.sanorm_hidden = 8;
    c.disc.base_channels = 8;
    c.trainer.epochs = 25;
    c.trainer.decay_start_epoch = 20;
    c.checkpoint_every = 5;
    c
}
