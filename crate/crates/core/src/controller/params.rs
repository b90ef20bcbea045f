//! Actuation parameter sets, one row per mode.
//!
//! ```toml
//! name = "set1"
//!
//! [[modes]]
//! mode = "LEFT"
//! freq_khz = 11
//! duration_ms = 1000
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModeName, ModeRegistry, RegisteredMode};
use crate::resonance::{MAX_FREQ_KHZ, MIN_FREQ_KHZ};

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("reading parameter set")]
    Io(#[from] std::io::Error),
    #[error("parsing parameter set")]
    Toml(#[from] toml::de::Error),
    #[error("mode {0} listed twice")]
    Duplicate(ModeName),
    #[error("incomplete parameter set, missing {0:?}")]
    Incomplete(Vec<ModeName>),
    #[error("mode {mode}: frequency {freq_khz} kHz outside 1..=100")]
    Frequency { mode: ModeName, freq_khz: u32 },
    #[error("mode {mode}: duration {duration_ms} ms must be a positive multiple of 100 up to 10000")]
    Duration { mode: ModeName, duration_ms: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ModeRow {
    mode: ModeName,
    freq_khz: u32,
    duration_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsFile {
    #[serde(default)]
    name: String,
    modes: Vec<ModeRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterSet {
    pub name: String,
    pub registry: ModeRegistry,
}

impl ParameterSet {
    fn from_rows(name: &str, rows: &[(ModeName, u32, u32)]) -> Self {
        let mut registry = ModeRegistry::default();
        for &(mode, freq_khz, duration_ms) in rows {
            registry.set(mode, RegisteredMode { freq_khz, duration_ms });
        }
        Self {
            name: name.to_string(),
            registry,
        }
    }

    /// LEFT 11 kHz / 1 s, RIGHT 9 kHz / 1 s, STRAIGHT 5 kHz / 2 s, SEARCH 57 kHz / 1 s.
    pub fn set1() -> Self {
        Self::from_rows(
            "set1",
            &[
                (ModeName::Left, 11, 1000),
                (ModeName::Right, 9, 1000),
                (ModeName::Straight, 5, 2000),
                (ModeName::Search, 57, 1000),
            ],
        )
    }

    /// LEFT 59 kHz / 2 s, RIGHT 57 kHz / 2 s, STRAIGHT 5 kHz / 5 s, SEARCH 57 kHz / 1 s.
    pub fn set2() -> Self {
        Self::from_rows(
            "set2",
            &[
                (ModeName::Left, 59, 2000),
                (ModeName::Right, 57, 2000),
                (ModeName::Straight, 5, 5000),
                (ModeName::Search, 57, 1000),
            ],
        )
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ParamsError> {
        let file: ParamsFile = toml::from_str(text)?;
        let mut registry = ModeRegistry::default();
        for row in &file.modes {
            if registry.slot(row.mode).freq_khz.is_some() {
                return Err(ParamsError::Duplicate(row.mode));
            }
            if !(MIN_FREQ_KHZ..=MAX_FREQ_KHZ).contains(&row.freq_khz) {
                return Err(ParamsError::Frequency {
                    mode: row.mode,
                    freq_khz: row.freq_khz,
                });
            }
            if row.duration_ms == 0 || row.duration_ms % 100 != 0 || row.duration_ms > 10_000 {
                return Err(ParamsError::Duration {
                    mode: row.mode,
                    duration_ms: row.duration_ms,
                });
            }
            registry.set(
                row.mode,
                RegisteredMode {
                    freq_khz: row.freq_khz,
                    duration_ms: row.duration_ms,
                },
            );
        }
        let missing = registry.missing();
        if !missing.is_empty() {
            return Err(ParamsError::Incomplete(missing));
        }
        Ok(Self {
            name: file.name,
            registry,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParamsError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ParamsFile {
            name: self.name.clone(),
            modes: ModeName::ALL
                .into_iter()
                .filter_map(|mode| {
                    self.registry.get(mode).map(|e| ModeRow {
                        mode,
                        freq_khz: e.freq_khz,
                        duration_ms: e.duration_ms,
                    })
                })
                .collect(),
        };
        toml::to_string(&file).expect("parameter sets always serialize")
    }
}
