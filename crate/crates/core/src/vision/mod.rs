//! Zone classification: dataset synthesis, the CNN, training and inference.

pub mod cnn;
pub mod dataset;
pub mod train;
pub mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{CameraImage, Capture};
pub use cnn::CnnParams;
pub use dataset::{generate_dataset, Sample};
pub use train::{train, EpochMetrics, TrainConfig};
pub use weights::{export_params, import_params, WeightsError};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("dataset size must be at least 1, got {0}")]
    InvalidCount(usize),
    #[error("training data is empty")]
    EmptyData,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("dataset archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Horizontal zone of the target in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ZoneLabel {
    Left = 0,
    Middle = 1,
    Right = 2,
    Outside = 3,
}

impl ZoneLabel {
    pub const ALL: [ZoneLabel; 4] = [ZoneLabel::Left, ZoneLabel::Middle, ZoneLabel::Right, ZoneLabel::Outside];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl From<ZoneLabel> for u8 {
    fn from(z: ZoneLabel) -> u8 {
        z as u8
    }
}

impl TryFrom<u8> for ZoneLabel {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Self::from_index(v as usize).ok_or_else(|| format!("zone label must be 0..=3, got {v}"))
    }
}

/// Label of a star centered at column `x` (output pixels) in a frame of
/// `width`: the third containing it, or outside.
pub fn zone_for_column(x: f64, width: f64) -> ZoneLabel {
    if !(0.0..width).contains(&x) {
        return ZoneLabel::Outside;
    }
    match (3.0 * x / width) as usize {
        0 => ZoneLabel::Left,
        1 => ZoneLabel::Middle,
        _ => ZoneLabel::Right,
    }
}

pub fn classify(params: &CnnParams<f32>, image: &CameraImage) -> ZoneLabel {
    let p = params.forward(image.pixels());
    ZoneLabel::from_index(cnn::argmax(&p)).expect("argmax over four classes")
}

/// Anything that turns a capture into a zone decision.
pub trait ZoneClassifier {
    fn classify(&mut self, capture: &Capture) -> ZoneLabel;
}

impl ZoneClassifier for CnnParams<f32> {
    fn classify(&mut self, capture: &Capture) -> ZoneLabel {
        classify(self, &capture.image)
    }
}

/// Labels each capture from the simulator's ground-truth star position,
/// exactly as the dataset labels are defined.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthClassifier;

impl ZoneClassifier for GroundTruthClassifier {
    fn classify(&mut self, capture: &Capture) -> ZoneLabel {
        capture
            .star_column
            .map_or(ZoneLabel::Outside, |c| zone_for_column(c, CameraImage::WIDTH as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirds() {
        assert_eq!(zone_for_column(0.1 * 40.0, 40.0), ZoneLabel::Left);
        assert_eq!(zone_for_column(20.0, 40.0), ZoneLabel::Middle);
        assert_eq!(zone_for_column(39.9, 40.0), ZoneLabel::Right);
        assert_eq!(zone_for_column(40.0, 40.0), ZoneLabel::Outside);
        assert_eq!(zone_for_column(-0.01, 40.0), ZoneLabel::Outside);
    }

    #[test]
    fn zero_params_classify_as_zero() {
        let p = CnnParams::<f32>::zeros();
        assert_eq!(classify(&p, &CameraImage::blank()), ZoneLabel::Left);
    }

    #[test]
    fn label_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&ZoneLabel::Right).unwrap(), "2");
        assert_eq!(serde_json::from_str::<ZoneLabel>("3").unwrap(), ZoneLabel::Outside);
        assert!(serde_json::from_str::<ZoneLabel>("4").is_err());
    }
}
