//! Forward-facing pinhole camera at the robot center.
//!
//! Only the horizontal geometry is modeled: the target's bearing sets the
//! image column through the focal length `(W/2) / tan(FoV/2)`, its distance
//! sets the apparent size, and the star is drawn on the center row.

use serde::{Deserialize, Serialize};

use super::raster::{Canvas, StarShape};
use crate::kinematics::Pose;

pub const IMAGE_WIDTH: usize = 40;
pub const IMAGE_HEIGHT: usize = 30;
/// Rendering happens at this multiple of the output resolution before area
/// averaging (160 x 120).
pub const SUPERSAMPLE: usize = 4;

/// 40 x 30 grayscale frame with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraImage {
    pixels: Vec<f32>,
}

impl CameraImage {
    pub const WIDTH: usize = IMAGE_WIDTH;
    pub const HEIGHT: usize = IMAGE_HEIGHT;

    pub fn blank() -> Self {
        Self {
            pixels: vec![0.0; IMAGE_WIDTH * IMAGE_HEIGHT],
        }
    }

    /// Wrap raw pixels; `None` unless there are exactly 1200 values in `[0, 1]`.
    pub fn from_pixels(pixels: Vec<f32>) -> Option<Self> {
        (pixels.len() == IMAGE_WIDTH * IMAGE_HEIGHT && pixels.iter().all(|p| (0.0..=1.0).contains(p)))
            .then_some(Self { pixels })
    }

    pub(crate) fn from_canvas(c: Canvas) -> Self {
        debug_assert_eq!((c.width, c.height), (IMAGE_WIDTH, IMAGE_HEIGHT));
        Self { pixels: c.pixels }
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * IMAGE_WIDTH + col]
    }

    pub fn is_blank(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0.0)
    }

    /// Intensity-weighted mean column, or `None` for a blank frame.
    pub fn centroid_x(&self) -> Option<f64> {
        let (mut m, mut mx) = (0.0f64, 0.0f64);
        for (i, &p) in self.pixels.iter().enumerate() {
            m += p as f64;
            mx += p as f64 * ((i % IMAGE_WIDTH) as f64 + 0.5);
        }
        (m > 0.0).then(|| mx / m)
    }

    /// 8-bit quantization, used by the raw dataset archive.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        (bytes.len() == IMAGE_WIDTH * IMAGE_HEIGHT).then(|| Self {
            pixels: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fov_deg: f64,
    /// Objects closer than this along the optical axis are not drawn, cm.
    pub near_cm: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fov_deg: 60.0,
            near_cm: 0.5,
        }
    }
}

impl CameraModel {
    /// Focal length in output pixels.
    pub fn focal_px(&self) -> f64 {
        (IMAGE_WIDTH as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Image column (output pixels, may fall outside the frame) at which a
    /// point at `bearing` rad appears. Positive bearings are to the left.
    pub fn column_for_bearing(&self, bearing: f64) -> f64 {
        IMAGE_WIDTH as f64 / 2.0 - self.focal_px() * bearing.tan()
    }

    /// Where and how large a star of `outer_radius` cm at `target` would be
    /// drawn on the supersampled canvas, or `None` when it is behind the
    /// camera.
    pub fn project_star(&self, robot: &Pose, target: [f64; 2], outer_radius: f64, rotation: f64) -> Option<StarShape> {
        let bearing = robot.bearing_to(target);
        let distance = robot.distance_to(target);
        if distance * bearing.cos() <= self.near_cm {
            return None;
        }
        let ss = SUPERSAMPLE as f64;
        Some(StarShape {
            cx: self.column_for_bearing(bearing) * ss,
            cy: IMAGE_HEIGHT as f64 / 2.0 * ss,
            outer_radius: self.focal_px() * outer_radius / distance * ss,
            rotation,
            shear: 0.0,
        })
    }

    pub fn render(&self, robot: &Pose, target: [f64; 2], outer_radius: f64, rotation: f64) -> CameraImage {
        let mut canvas = Canvas::new(IMAGE_WIDTH * SUPERSAMPLE, IMAGE_HEIGHT * SUPERSAMPLE);
        if let Some(star) = self.project_star(robot, target, outer_radius, rotation) {
            canvas.fill_star(&star);
        }
        CameraImage::from_canvas(canvas.downsample(SUPERSAMPLE))
    }
}
