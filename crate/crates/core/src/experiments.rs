//! Open-loop experiments: the frequency sweep and the scouting sequence.

use serde::{Deserialize, Serialize};

use crate::kinematics::{characterize_trajectory, marks_to_pose, wrap_angle, CharacterizationRow, KinematicsError, Pose, TrajectorySample};
use crate::resonance::{ModeTable, MAX_FREQ_KHZ, MIN_FREQ_KHZ};
use crate::world::{Arena, StarTarget, World, WorldConfig, WorldError, DEFAULT_TICK_DT};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("frequency range {0}..={1} kHz is outside 1..=100 or empty")]
    Range(u32, u32),
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub start_khz: u32,
    pub end_khz: u32,
    /// Actuation time per frequency, seconds.
    pub duration_s: f64,
    /// Averaging window handed to the trajectory analysis, seconds.
    pub window_s: f64,
    pub tick_dt: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start_khz: MIN_FREQ_KHZ,
            end_khz: MAX_FREQ_KHZ,
            duration_s: 30.0,
            window_s: 1.0,
            tick_dt: DEFAULT_TICK_DT,
            noise_scale: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrequencyRun {
    pub row: CharacterizationRow,
    pub trajectory: Vec<TrajectorySample>,
}

fn fresh_world(tick_dt: f64, noise_scale: f64, seed: u64) -> World {
    World::new(
        Pose::new(0.0, 0.0, 0.0),
        StarTarget {
            position: [1.0e3, 0.0],
            outer_radius: 2.5,
            orientation: 0.0,
        },
        Arena::square(1.0e4),
        WorldConfig {
            tick_dt,
            noise_scale,
            ..WorldConfig::default()
        },
        seed,
    )
}

/// Actuate each frequency in turn from a fresh world at the origin and
/// summarize the tracked marks.
///
/// Frequency `f` runs with world seed `seed + f`, so any single row can be
/// reproduced on its own.
pub fn sweep(table: &ModeTable, cfg: &SweepConfig) -> Result<Vec<FrequencyRun>, ExperimentError> {
    if cfg.start_khz > cfg.end_khz || cfg.start_khz < MIN_FREQ_KHZ || cfg.end_khz > MAX_FREQ_KHZ {
        return Err(ExperimentError::Range(cfg.start_khz, cfg.end_khz));
    }
    for (name, v) in [("duration_s", cfg.duration_s), ("window_s", cfg.window_s), ("tick_dt", cfg.tick_dt)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ExperimentError::NonPositive(name, v));
        }
    }
    (cfg.start_khz..=cfg.end_khz)
        .map(|freq| {
            let mut world = fresh_world(cfg.tick_dt, cfg.noise_scale, cfg.seed.wrapping_add(freq as u64));
            let out = world.step_actuation(table, freq, cfg.duration_s)?;
            let d = characterize_trajectory(&out.samples, cfg.window_s)?;
            Ok(FrequencyRun {
                row: CharacterizationRow::new(freq, d),
                trajectory: out.samples,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoutConfig {
    pub cycles: u32,
    /// Used on odd cycles (1st, 3rd, ...).
    pub cw_khz: u32,
    /// Used on even cycles.
    pub ccw_khz: u32,
    pub segment_s: f64,
    pub tick_dt: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for ScoutConfig {
    fn default() -> Self {
        Self {
            cycles: 10,
            cw_khz: 58,
            ccw_khz: 59,
            segment_s: 6.0,
            tick_dt: DEFAULT_TICK_DT,
            noise_scale: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoutCycle {
    pub cycle: u32,
    pub freq_khz: u32,
    /// Heading change over the segment, radians.
    pub dtheta: f64,
    /// Accumulated |heading change| so far, radians.
    pub coverage: f64,
    /// Center distance from the start pose after the segment, cm.
    pub displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoutReport {
    pub config: ScoutConfig,
    /// Sum of |heading change| over all ticks, radians.
    pub coverage_rad: f64,
    /// Width of the range of headings visited, radians.
    pub heading_span_rad: f64,
    pub net_displacement_cm: f64,
    pub max_displacement_cm: f64,
    pub cycles: Vec<ScoutCycle>,
    #[serde(skip)]
    pub trajectory: Vec<TrajectorySample>,
}

/// Alternate a clockwise and a counter-clockwise mode to look around while
/// staying in place.
pub fn scout(table: &ModeTable, cfg: &ScoutConfig) -> Result<ScoutReport, ExperimentError> {
    for (name, v) in [("segment_s", cfg.segment_s), ("tick_dt", cfg.tick_dt)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ExperimentError::NonPositive(name, v));
        }
    }
    let mut world = fresh_world(cfg.tick_dt, cfg.noise_scale, cfg.seed);
    let start = marks_to_pose(&world.sample_now())?;
    let mut trajectory = vec![world.sample_now()];
    let mut cycles = Vec::with_capacity(cfg.cycles as usize);
    let (mut coverage, mut unwrapped, mut lo, mut hi, mut max_disp) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for cycle in 1..=cfg.cycles {
        let freq = if cycle % 2 == 1 { cfg.cw_khz } else { cfg.ccw_khz };
        let before = unwrapped;
        let out = world.step_actuation(table, freq, cfg.segment_s)?;
        let poses = out.samples.iter().map(marks_to_pose).collect::<Result<Vec<_>, _>>()?;
        for w in poses.windows(2) {
            let d = wrap_angle(w[1].theta - w[0].theta);
            coverage += d.abs();
            unwrapped += d;
            lo = lo.min(unwrapped);
            hi = hi.max(unwrapped);
            max_disp = max_disp.max(w[1].distance_to([start.x_c, start.y_c]));
        }
        trajectory.extend_from_slice(&out.samples[1..]);
        cycles.push(ScoutCycle {
            cycle,
            freq_khz: freq,
            dtheta: unwrapped - before,
            coverage,
            displacement: world.robot.distance_to([start.x_c, start.y_c]),
        });
    }
    Ok(ScoutReport {
        config: *cfg,
        coverage_rad: coverage,
        heading_span_rad: hi - lo,
        net_displacement_cm: world.robot.distance_to([start.x_c, start.y_c]),
        max_displacement_cm: max_disp,
        cycles,
        trajectory,
    })
}
