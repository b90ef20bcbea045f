//! Frequency to body-motion mapping.
//!
//! A [`ModeTable`] holds one [`MotionMode`] per integer kHz in `1..=100`. It is
//! loaded from a line-oriented calibration file; see `calibration/default.csv`
//! for the format and the shipped default. The table is immutable after load.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::NoiseRng;

pub const MIN_FREQ_KHZ: u32 = 1;
pub const MAX_FREQ_KHZ: u32 = 100;

/// The calibration shipped with the crate.
pub const DEFAULT_CALIBRATION: &str = include_str!("../../../calibration/default.csv");

#[derive(Debug, Error, PartialEq)]
pub enum ResonanceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: frequency {freq} kHz outside 1..=100")]
    AnchorOutOfRange { line: usize, freq: i64 },
    #[error("line {line}: {freq} kHz declared twice")]
    DuplicateAnchor { line: usize, freq: u32 },
    #[error("{freq} kHz lies in no-motion band {lo}-{hi} kHz but has nonzero velocity")]
    MotionInNoMotionBand { freq: u32, lo: u32, hi: u32 },
    #[error("{freq} kHz is not covered by an anchor or an interpolation pair")]
    Uncovered { freq: u32 },
    #[error("frequency {0} kHz outside 1..=100")]
    FrequencyOutOfRange(i64),
}

/// Body-frame velocities: translational, lateral (CCW of heading) and angular.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub v_t: f64,
    pub v_l: f64,
    pub omega: f64,
}

impl BodyVelocity {
    pub const ZERO: BodyVelocity = BodyVelocity {
        v_t: 0.0,
        v_l: 0.0,
        omega: 0.0,
    };

    pub fn speed(&self) -> f64 {
        self.v_t.hypot(self.v_l)
    }

    pub fn is_zero(&self) -> bool {
        self.v_t == 0.0 && self.v_l == 0.0 && self.omega == 0.0
    }
}

/// Motion descriptor for one actuation frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionMode {
    pub freq_khz: u32,
    /// cm/s along the heading.
    pub v_t: f64,
    /// cm/s, positive 90 degrees counter-clockwise from the heading.
    pub v_l: f64,
    /// rad/s, positive counter-clockwise.
    pub omega: f64,
    /// rad/sqrt(s)
    pub sigma_heading: f64,
    pub sigma_speed: f64,
    pub label: String,
}

impl MotionMode {
    pub fn velocity(&self) -> BodyVelocity {
        BodyVelocity {
            v_t: self.v_t,
            v_l: self.v_l,
            omega: self.omega,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity().speed()
    }

    pub fn is_zero_motion(&self) -> bool {
        self.velocity().is_zero()
    }
}

/// Validated frequency table covering every integer kHz in `1..=100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTable {
    entries: Vec<MotionMode>,
    no_motion_bands: Vec<RangeInclusive<u32>>,
}

impl ModeTable {
    /// The table parsed from [`DEFAULT_CALIBRATION`].
    pub fn default_calibration() -> Self {
        load_mode_table(DEFAULT_CALIBRATION).expect("shipped calibration is valid")
    }

    pub fn lookup(&self, freq_khz: u32) -> Result<&MotionMode, ResonanceError> {
        lookup_mode(self, freq_khz)
    }

    pub fn entries(&self) -> &[MotionMode] {
        &self.entries
    }

    pub fn no_motion_bands(&self) -> &[RangeInclusive<u32>] {
        &self.no_motion_bands
    }

    pub fn in_no_motion_band(&self, freq_khz: u32) -> bool {
        band_containing(&self.no_motion_bands, freq_khz).is_some()
    }

    /// Serialize to the calibration format. Every frequency is written out
    /// explicitly, so reloading the text reproduces the table exactly.
    pub fn to_calibration_text(&self) -> String {
        let mut out = String::from("# freq_khz,v_t,v_l,omega,sigma_heading,sigma_speed,label\n");
        for band in &self.no_motion_bands {
            let _ = writeln!(out, "band,{},{}", band.start(), band.end());
        }
        for m in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.freq_khz, m.v_t, m.v_l, m.omega, m.sigma_heading, m.sigma_speed, m.label
            );
        }
        out
    }
}

fn band_containing(bands: &[RangeInclusive<u32>], freq: u32) -> Option<&RangeInclusive<u32>> {
    bands.iter().find(|b| b.contains(&freq))
}

fn parse_num<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T, ResonanceError> {
    field.trim().parse().map_err(|_| ResonanceError::Parse {
        line,
        message: format!("invalid {what} {:?}", field.trim()),
    })
}

/// Parse and validate a calibration file.
///
/// Frequencies missing from the file are filled as follows: inside a
/// no-motion band they get zero motion; inside an active run they are
/// linearly interpolated between the nearest declared anchors of that run.
pub fn load_mode_table(calibration_text: &str) -> Result<ModeTable, ResonanceError> {
    let mut bands: Vec<RangeInclusive<u32>> = Vec::new();
    let mut anchors: Vec<Option<MotionMode>> = vec![None; MAX_FREQ_KHZ as usize];
    let mut anchor_lines = vec![0usize; MAX_FREQ_KHZ as usize];

    for (idx, raw) in calibration_text.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields[0].trim() == "band" {
            if fields.len() != 3 {
                return Err(ResonanceError::Parse {
                    line,
                    message: "band lines are `band,lo,hi`".into(),
                });
            }
            let lo: i64 = parse_num(fields[1], line, "band start")?;
            let hi: i64 = parse_num(fields[2], line, "band end")?;
            for f in [lo, hi] {
                if !(MIN_FREQ_KHZ as i64..=MAX_FREQ_KHZ as i64).contains(&f) {
                    return Err(ResonanceError::AnchorOutOfRange { line, freq: f });
                }
            }
            if lo > hi {
                return Err(ResonanceError::Parse {
                    line,
                    message: format!("empty band {lo}-{hi}"),
                });
            }
            bands.push(lo as u32..=hi as u32);
            continue;
        }
        if fields.len() < 7 {
            return Err(ResonanceError::Parse {
                line,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let freq: i64 = parse_num(fields[0], line, "frequency")?;
        if !(MIN_FREQ_KHZ as i64..=MAX_FREQ_KHZ as i64).contains(&freq) {
            return Err(ResonanceError::AnchorOutOfRange { line, freq });
        }
        let freq = freq as u32;
        let mut values = [0.0f64; 5];
        let names = ["v_t", "v_l", "omega", "sigma_heading", "sigma_speed"];
        for (slot, (field, name)) in values.iter_mut().zip(fields[1..6].iter().zip(names)) {
            let v: f64 = parse_num(field, line, name)?;
            if !v.is_finite() {
                return Err(ResonanceError::Parse {
                    line,
                    message: format!("{name} is not finite"),
                });
            }
            *slot = v;
        }
        if values[3] < 0.0 || values[4] < 0.0 {
            return Err(ResonanceError::Parse {
                line,
                message: "noise scales must be non-negative".into(),
            });
        }
        // The label is the remainder of the line and may itself contain commas.
        let label = fields[6..].join(",").trim().to_string();
        let slot = &mut anchors[(freq - 1) as usize];
        if slot.is_some() {
            return Err(ResonanceError::DuplicateAnchor { line, freq });
        }
        anchor_lines[(freq - 1) as usize] = line;
        *slot = Some(MotionMode {
            freq_khz: freq,
            v_t: values[0],
            v_l: values[1],
            omega: values[2],
            sigma_heading: values[3],
            sigma_speed: values[4],
            label,
        });
    }

    for anchor in anchors.iter().flatten() {
        if let Some(band) = band_containing(&bands, anchor.freq_khz) {
            if !anchor.is_zero_motion() {
                return Err(ResonanceError::MotionInNoMotionBand {
                    freq: anchor.freq_khz,
                    lo: *band.start(),
                    hi: *band.end(),
                });
            }
        }
    }

    let mut entries = Vec::with_capacity(MAX_FREQ_KHZ as usize);
    for freq in MIN_FREQ_KHZ..=MAX_FREQ_KHZ {
        let i = (freq - 1) as usize;
        if let Some(band) = band_containing(&bands, freq) {
            let (sigma_heading, sigma_speed, label) = match &anchors[i] {
                Some(a) => (a.sigma_heading, a.sigma_speed, a.label.clone()),
                None => (0.0, 0.0, format!("no motion ({}-{} kHz band)", band.start(), band.end())),
            };
            entries.push(MotionMode {
                freq_khz: freq,
                v_t: 0.0,
                v_l: 0.0,
                omega: 0.0,
                sigma_heading,
                sigma_speed,
                label,
            });
            continue;
        }
        if let Some(a) = &anchors[i] {
            entries.push(a.clone());
            continue;
        }
        let below = (MIN_FREQ_KHZ..freq)
            .rev()
            .take_while(|f| band_containing(&bands, *f).is_none())
            .find_map(|f| anchors[(f - 1) as usize].as_ref());
        let above = (freq + 1..=MAX_FREQ_KHZ)
            .take_while(|f| band_containing(&bands, *f).is_none())
            .find_map(|f| anchors[(f - 1) as usize].as_ref());
        match (below, above) {
            (Some(lo), Some(hi)) => entries.push(interpolate(lo, hi, freq)),
            _ => return Err(ResonanceError::Uncovered { freq }),
        }
    }

    bands.sort_by_key(|b| *b.start());
    Ok(ModeTable {
        entries,
        no_motion_bands: bands,
    })
}

fn interpolate(lo: &MotionMode, hi: &MotionMode, freq: u32) -> MotionMode {
    let w = (freq - lo.freq_khz) as f64 / (hi.freq_khz - lo.freq_khz) as f64;
    let lerp = |a: f64, b: f64| a + (b - a) * w;
    MotionMode {
        freq_khz: freq,
        v_t: lerp(lo.v_t, hi.v_t),
        v_l: lerp(lo.v_l, hi.v_l),
        omega: lerp(lo.omega, hi.omega),
        sigma_heading: lerp(lo.sigma_heading, hi.sigma_heading),
        sigma_speed: lerp(lo.sigma_speed, hi.sigma_speed),
        label: format!("{freq} kHz interpolated from {} and {} kHz", lo.freq_khz, hi.freq_khz),
    }
}

/// Table lookup for an integer frequency. No interpolation happens here.
pub fn lookup_mode(table: &ModeTable, freq_khz: u32) -> Result<&MotionMode, ResonanceError> {
    if !(MIN_FREQ_KHZ..=MAX_FREQ_KHZ).contains(&freq_khz) {
        return Err(ResonanceError::FrequencyOutOfRange(freq_khz as i64));
    }
    Ok(&table.entries[(freq_khz - 1) as usize])
}

/// Draw perturbed body velocities for one integration step of length `dt`.
///
/// All three velocities are scaled by `1 + e_s` with `e_s ~ N(0, sigma_speed)`.
/// The heading rate additionally receives `sigma_heading * z / sqrt(dt)` with
/// `z ~ N(0, 1)`, so the heading increment over the step has standard
/// deviation `sigma_heading * sqrt(dt)` (a Brownian heading walk). `e_s` is
/// drawn before `z`. Zero-motion modes return zero without consuming `rng`.
pub fn sample_body_velocity(mode: &MotionMode, dt: f64, rng: &mut NoiseRng) -> BodyVelocity {
    if mode.is_zero_motion() {
        return BodyVelocity::ZERO;
    }
    if mode.sigma_speed == 0.0 && mode.sigma_heading == 0.0 {
        return mode.velocity();
    }
    let scale = 1.0 + mode.sigma_speed * rng.standard_normal();
    let heading_kick = mode.sigma_heading * rng.standard_normal() / dt.max(f64::MIN_POSITIVE).sqrt();
    BodyVelocity {
        v_t: mode.v_t * scale,
        v_l: mode.v_l * scale,
        omega: mode.omega * scale + heading_kick,
    }
}
