use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use sragan::data::{load_dataset, sample_unpaired};
use sragan::AppError;

fn write_rgb(path: &Path, w: u32, h: u32) {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7) as u8, (y * 5) as u8, 90])).save(path).unwrap();
}

#[test]
fn gray_and_rgb_both_load_as_three_channels() {
    let dir = tempfile::tempdir().unwrap();
    GrayImage::from_fn(20, 30, |x, _| Luma([(x * 10) as u8])).save(dir.path().join("a.png")).unwrap();
    write_rgb(&dir.path().join("b.jpg"), 40, 40);
    let ds = load_dataset(dir.path(), 16).unwrap();
    assert_eq!(ds.image_ids, ["a.png", "b.jpg"]);
    for img in &ds.images {
        assert_eq!(img.shape(), &[1, 3, 16, 16]);
        assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    let gray = ds.images[0].data();
    assert_eq!(&gray[..256], &gray[256..512]);
}

#[test]
fn single_image_of_any_size_is_resized() {
    let dir = tempfile::tempdir().unwrap();
    write_rgb(&dir.path().join("only.png"), 37, 23);
    let ds = load_dataset(dir.path(), 32).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.images[0].shape(), &[1, 3, 32, 32]);
}

#[test]
fn loading_is_idempotent_and_sorted() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["c.png", "a.png", "b.png"] {
        write_rgb(&dir.path().join(name), 16, 16);
    }
    let a = load_dataset(dir.path(), 16).unwrap();
    assert_eq!(a.image_ids, ["a.png", "b.png", "c.png"]);
    assert_eq!(a, load_dataset(dir.path(), 16).unwrap());
}

#[test]
fn bad_files_are_skipped_or_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path(), 16), Err(AppError::Config(_))));
    assert!(matches!(load_dataset(&dir.path().join("nope"), 16), Err(AppError::MissingPath(_))));

    std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
    std::fs::write(dir.path().join("notes.txt"), b"hello").unwrap();
    assert!(matches!(load_dataset(dir.path(), 16), Err(AppError::Runtime(_))));

    write_rgb(&dir.path().join("good.png"), 16, 16);
    let ds = load_dataset(dir.path(), 16).unwrap();
    assert_eq!(ds.image_ids, ["good.png"]);
}

#[test]
fn unpaired_sampling_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (dx, dy) = (dir.path().join("x"), dir.path().join("y"));
    std::fs::create_dir_all(&dx).unwrap();
    std::fs::create_dir_all(&dy).unwrap();
    write_rgb(&dx.join("0.png"), 16, 16);
    for i in 0..5 {
        RgbImage::from_pixel(16, 16, Rgb([i * 40, 0, 0])).save(dy.join(format!("{i}.png"))).unwrap();
    }
    let (x, y) = (load_dataset(&dx, 16).unwrap(), load_dataset(&dy, 16).unwrap());

    let a: Vec<_> = sample_unpaired(&x, &y, 1, 0).unwrap().take(12).collect();
    let b: Vec<_> = sample_unpaired(&x, &y, 1, 0).unwrap().take(12).collect();
    assert_eq!(a, b);
    assert!(a.iter().all(|batch| batch.x == x.images[0]));

    let c: Vec<_> = sample_unpaired(&y, &y, 2, 4).unwrap().take(4).collect();
    let d: Vec<_> = sample_unpaired(&y, &y, 2, 4).unwrap().take(4).collect();
    assert_eq!(c, d);
    assert_eq!(c[0].x.shape(), &[2, 3, 16, 16]);
}
