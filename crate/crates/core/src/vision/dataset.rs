//! Synthetic star dataset: random placement, scale, rotation and shear.
//!
//! Sample `i` is drawn from its own slice of the dataset stream, so any
//! subset can be regenerated independently. Classes are stratified
//! (`i % 4`), which keeps the histogram uniform without resampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{zone_for_column, VisionError, ZoneLabel};
use crate::rng::{stream_rng, streams};
use crate::world::camera::{CameraImage, IMAGE_HEIGHT, IMAGE_WIDTH, SUPERSAMPLE};
use crate::world::raster::{Canvas, StarShape};

/// Random words reserved per sample; far more than one sample consumes.
const WORDS_PER_SAMPLE: u128 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Outer radius range in output pixels.
    pub min_radius_px: f64,
    pub max_radius_px: f64,
    /// Shear is uniform in `[-max_shear, max_shear]`.
    pub max_shear: f64,
    /// Class-3 centers lie up to this many frame widths beyond either edge.
    pub outside_margin: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            min_radius_px: 1.0,
            max_radius_px: 20.0,
            max_shear: 0.3,
            outside_margin: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: CameraImage,
    pub label: ZoneLabel,
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = stream_rng(seed, streams::DATASET);
    rng.set_word_pos(index as u128 * WORDS_PER_SAMPLE);
    rng
}

/// The star geometry of sample `index`, in output pixels.
pub fn sample_geometry(cfg: &DatasetConfig, seed: u64, index: usize) -> StarShape {
    let mut rng = sample_rng(seed, index);
    let w = IMAGE_WIDTH as f64;
    let third = w / 3.0;
    let cx = match ZoneLabel::from_index(index % 4).expect("index % 4 is a class") {
        ZoneLabel::Left => rng.random_range(0.0..third),
        ZoneLabel::Middle => rng.random_range(third..2.0 * third),
        ZoneLabel::Right => rng.random_range(2.0 * third..w),
        ZoneLabel::Outside => {
            let off = rng.random_range(0.0..cfg.outside_margin * w);
            if rng.random_bool(0.5) {
                -off - f64::EPSILON
            } else {
                w + off
            }
        }
    };
    StarShape {
        cx,
        cy: rng.random_range(0.0..IMAGE_HEIGHT as f64),
        outer_radius: rng.random_range(cfg.min_radius_px..cfg.max_radius_px),
        rotation: rng.random_range(0.0..std::f64::consts::TAU / 5.0),
        shear: rng.random_range(-cfg.max_shear..=cfg.max_shear),
    }
}

/// Rasterize a star given in output pixels at the supersampled resolution
/// and area-average down to 40x30.
pub fn render_star(star: &StarShape) -> CameraImage {
    let s = SUPERSAMPLE as f64;
    let mut canvas = Canvas::new(IMAGE_WIDTH * SUPERSAMPLE, IMAGE_HEIGHT * SUPERSAMPLE);
    canvas.fill_star(&StarShape {
        cx: star.cx * s,
        cy: star.cy * s,
        outer_radius: star.outer_radius * s,
        ..*star
    });
    CameraImage::from_canvas(canvas.downsample(SUPERSAMPLE))
}

pub fn generate_sample(cfg: &DatasetConfig, seed: u64, index: usize) -> Sample {
    let star = sample_geometry(cfg, seed, index);
    Sample {
        image: render_star(&star),
        label: zone_for_column(star.cx, IMAGE_WIDTH as f64),
    }
}

pub fn generate_dataset(n: usize, seed: u64) -> Result<Vec<Sample>, VisionError> {
    generate_dataset_with(&DatasetConfig::default(), n, seed)
}

pub fn generate_dataset_with(cfg: &DatasetConfig, n: usize, seed: u64) -> Result<Vec<Sample>, VisionError> {
    if n == 0 {
        return Err(VisionError::InvalidCount(n));
    }
    Ok((0..n).map(|i| generate_sample(cfg, seed, i)).collect())
}

pub fn class_histogram(samples: &[Sample]) -> [usize; 4] {
    let mut h = [0; 4];
    for s in samples {
        h[s.label.index()] += 1;
    }
    h
}

/// Write `NNNNNN.raw` (1200 bytes, row-major, 8-bit) per sample plus
/// `labels.csv` with `file,label` rows.
pub fn write_archive(dir: &Path, samples: &[Sample]) -> Result<(), VisionError> {
    fs::create_dir_all(dir)?;
    let mut labels = csv::Writer::from_path(dir.join("labels.csv"))?;
    labels.write_record(["file", "label"])?;
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:06}.raw");
        fs::File::create(dir.join(&name))?.write_all(&s.image.to_bytes())?;
        labels.write_record([name, s.label.index().to_string()])?;
    }
    labels.flush()?;
    Ok(())
}

pub fn read_archive(dir: &Path) -> Result<Vec<Sample>, VisionError> {
    let mut labels = csv::Reader::from_path(dir.join("labels.csv"))?;
    let mut out = Vec::new();
    for rec in labels.records() {
        let rec = rec?;
        let (file, label) = (&rec[0], &rec[1]);
        let label = label
            .parse::<u8>()
            .ok()
            .and_then(|l| ZoneLabel::try_from(l).ok())
            .ok_or_else(|| VisionError::Archive(format!("bad label {label:?} for {file}")))?;
        let bytes = fs::read(dir.join(file))?;
        let image = CameraImage::from_bytes(&bytes)
            .ok_or_else(|| VisionError::Archive(format!("{file}: expected 1200 bytes, got {}", bytes.len())))?;
        out.push(Sample { image, label });
    }
    Ok(out)
}
