use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{encode_image, Grid, ImageFormat};
use super::{DataError, ImageRecord, Label, LabeledDataset, PixelGrid};

/// Mean intensity every class is kept away from, on the 0–255 scale.
const MIDPOINT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    /// Square side length in pixels.
    pub image_size: usize,
    pub seed: u64,
    /// Guaranteed gap between the brightest normal mean and the darkest covid mean.
    pub margin: f64,
    pub format: ImageFormat,
}

impl SynthConfig {
    pub fn new(n_per_class: usize, image_size: usize, seed: u64) -> Self {
        Self {
            n_per_class,
            image_size,
            seed,
            margin: 60.0,
            format: ImageFormat::Png,
        }
    }
}

/// Grayscale noise images. Covid images add bright diffuse blobs and are
/// lifted until their mean is at least `100 + margin/2`; normal images are
/// capped at a mean of `100 − margin/2`.
pub fn synth_dataset(config: &SynthConfig) -> Result<LabeledDataset, DataError> {
    if config.n_per_class == 0 || config.image_size == 0 {
        return Err(DataError::Invalid {
            what: "synthetic dataset",
            detail: "need at least one image per class and a non-zero size".into(),
        });
    }
    if !(0.0..=100.0).contains(&config.margin) {
        return Err(DataError::Invalid {
            what: "synthetic dataset",
            detail: format!("margin {} outside [0, 100]", config.margin),
        });
    }
    let mut records = Vec::with_capacity(2 * config.n_per_class);
    for label in Label::ALL {
        for i in 0..config.n_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((i as u64) << 1 | label.index() as u64);
            let pixels = match label {
                Label::Covid => covid_image(&mut rng, config),
                Label::Normal => normal_image(&mut rng, config),
            };
            records.push(ImageRecord {
                id: format!("{label}/{label}_{i:04}.{}", config.format.extension()),
                pixels,
                label,
            });
        }
    }
    LabeledDataset::new(records)
}

fn background(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let base = rng.gen_range(35.0..60.0);
    (0..size * size).map(|_| base + rng.gen_range(-25.0..25.0)).collect()
}

fn normal_image(rng: &mut ChaCha8Rng, config: &SynthConfig) -> PixelGrid {
    let px = background(rng, config.image_size);
    let mut img = quantize(&px, config.image_size);
    let ceiling = MIDPOINT - config.margin / 2.0;
    while img.mean() > ceiling {
        img.data_mut().iter_mut().for_each(|v| *v = v.saturating_sub(1));
    }
    img
}

fn covid_image(rng: &mut ChaCha8Rng, config: &SynthConfig) -> PixelGrid {
    let s = config.image_size;
    let mut px = background(rng, s);
    let blobs = rng.gen_range(3..=6);
    for _ in 0..blobs {
        let cx = rng.gen_range(0.15..0.85) * s as f64;
        let cy = rng.gen_range(0.15..0.85) * s as f64;
        let sigma = rng.gen_range(0.08..0.18) * s as f64;
        let amp = rng.gen_range(60.0..110.0);
        for y in 0..s {
            for x in 0..s {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                px[y * s + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let mut img = quantize(&px, s);
    let floor = MIDPOINT + config.margin / 2.0;
    while img.mean() < floor {
        img.data_mut().iter_mut().for_each(|v| *v = v.saturating_add(1));
    }
    img
}

fn quantize(px: &[f64], size: usize) -> PixelGrid {
    Grid::new(size, size, 1, px.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()).expect("square grid")
}

/// Writes `root/<label>/<file>` for every record, using the id as the relative path.
pub fn write_dataset(dataset: &LabeledDataset, root: impl AsRef<Path>) -> Result<(), DataError> {
    let root = root.as_ref();
    for label in Label::ALL {
        let dir = root.join(label.as_str());
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    }
    for r in dataset.records() {
        let path = root.join(&r.id);
        let format = path
            .extension()
            .and_then(|e| e.to_str())
            .and_then(ImageFormat::from_extension)
            .unwrap_or(ImageFormat::Png);
        let bytes = encode_image(&r.pixels, format)?;
        fs::write(&path, bytes).map_err(|e| DataError::io(&path, e))?;
    }
    Ok(())
}
