//! Filled five-point star rasterization and area downsampling.

use std::f64::consts::{FRAC_PI_2, PI};

/// Inner-to-outer vertex radius of a regular pentagram.
pub const STAR_INNER_RATIO: f64 = 0.381_966_011_250_105_1;

/// A star placed on an image plane, in pixels of that plane (y pointing down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarShape {
    pub cx: f64,
    pub cy: f64,
    pub outer_radius: f64,
    /// In-plane rotation, rad, counter-clockwise as seen on screen.
    pub rotation: f64,
    /// Horizontal shear: `x += shear * (y - cy)`.
    pub shear: f64,
}

impl StarShape {
    /// The ten polygon vertices, alternating outer and inner points, starting
    /// with an outer point straight up (before rotation and shear).
    pub fn vertices(&self) -> [[f64; 2]; 10] {
        let mut out = [[0.0; 2]; 10];
        for (k, v) in out.iter_mut().enumerate() {
            let a = FRAC_PI_2 + self.rotation + k as f64 * PI / 5.0;
            let r = if k % 2 == 0 {
                self.outer_radius
            } else {
                self.outer_radius * STAR_INNER_RATIO
            };
            let lx = r * a.cos();
            let ly = -r * a.sin();
            *v = [self.cx + lx + self.shear * ly, self.cy + ly];
        }
        out
    }
}

/// Single-channel float canvas, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn total(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum()
    }

    /// Fill `star` with intensity 1 using the even-odd rule at pixel centers.
    pub fn fill_star(&mut self, star: &StarShape) {
        let verts = star.vertices();
        let (min_y, max_y) = verts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[1]), hi.max(v[1])));
        let row_lo = (min_y - 0.5).ceil().max(0.0) as usize;
        let row_hi = ((max_y - 0.5).floor() + 1.0).clamp(0.0, self.height as f64) as usize;
        let mut crossings: Vec<f64> = Vec::with_capacity(10);
        for row in row_lo..row_hi {
            let y = row as f64 + 0.5;
            crossings.clear();
            for i in 0..verts.len() {
                let a = verts[i];
                let b = verts[(i + 1) % verts.len()];
                if (a[1] <= y && y < b[1]) || (b[1] <= y && y < a[1]) {
                    crossings.push(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for span in crossings.chunks_exact(2) {
                // pixel centers px + 0.5 in [x0, x1)
                let c0 = (span[0] - 0.5).ceil().max(0.0);
                let c1 = (span[1] - 0.5).ceil().min(self.width as f64);
                if c1 <= c0 {
                    continue;
                }
                let base = row * self.width;
                for px in c0 as usize..c1 as usize {
                    self.pixels[base + px] = 1.0;
                }
            }
        }
    }

    /// Average non-overlapping `factor` x `factor` blocks.
    pub fn downsample(&self, factor: usize) -> Canvas {
        assert!(factor > 0 && self.width.is_multiple_of(factor) && self.height.is_multiple_of(factor));
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = Canvas::new(w, h);
        let norm = 1.0 / (factor * factor) as f32;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for dy in 0..factor {
                    let row = (y * factor + dy) * self.width + x * factor;
                    acc += self.pixels[row..row + factor].iter().sum::<f32>();
                }
                out.pixels[y * w + x] = acc * norm;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(cx: f64, cy: f64, r: f64) -> StarShape {
        StarShape {
            cx,
            cy,
            outer_radius: r,
            rotation: 0.0,
            shear: 0.0,
        }
    }

    /// Area of a regular pentagram with outer radius R.
    fn pentagram_area(r: f64) -> f64 {
        // ten triangles (center, outer, inner) with angle pi/5 between them
        10.0 * 0.5 * r * r * STAR_INNER_RATIO * (PI / 5.0).sin()
    }

    #[test]
    fn filled_area_approximates_polygon_area() {
        let mut c = Canvas::new(160, 120);
        c.fill_star(&star(80.0, 60.0, 40.0));
        let expected = pentagram_area(40.0);
        assert!((c.total() - expected).abs() / expected < 0.02, "{} vs {expected}", c.total());
    }

    #[test]
    fn shear_preserves_area() {
        let mut a = Canvas::new(160, 120);
        a.fill_star(&star(80.0, 60.0, 30.0));
        let mut b = Canvas::new(160, 120);
        b.fill_star(&StarShape { shear: 0.3, ..star(80.0, 60.0, 30.0) });
        assert!((a.total() - b.total()).abs() / a.total() < 0.03);
    }

    #[test]
    fn fully_outside_star_draws_nothing() {
        let mut c = Canvas::new(160, 120);
        c.fill_star(&star(-60.0, 60.0, 30.0));
        c.fill_star(&star(250.0, 60.0, 30.0));
        c.fill_star(&star(80.0, -90.0, 30.0));
        assert_eq!(c.total(), 0.0);
    }

    #[test]
    fn star_points_up() {
        let mut c = Canvas::new(160, 120);
        c.fill_star(&star(80.0, 60.0, 40.0));
        // the top tip column is filled above the center, the bottom is the notch
        assert_eq!(c.pixels[(60 - 35) * 160 + 80], 1.0);
        assert_eq!(c.pixels[(60 + 35) * 160 + 80], 0.0);
    }

    #[test]
    fn downsample_preserves_total_intensity() {
        let mut c = Canvas::new(160, 120);
        c.fill_star(&StarShape { rotation: 0.4, shear: -0.2, ..star(70.3, 52.1, 23.7) });
        let d = c.downsample(4);
        assert_eq!((d.width, d.height), (40, 30));
        assert!((d.total() * 16.0 - c.total()).abs() <= 1e-3 * c.total());
        assert!(d.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}
