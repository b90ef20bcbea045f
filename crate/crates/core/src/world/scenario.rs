//! Scenario files: arena, robot start pose and target waypoints.
//!
//! ```toml
//! seed = 7
//! noise_scale = 0.0
//!
//! [arena]
//! x_min = -100.0
//! x_max = 100.0
//! y_min = -100.0
//! y_max = 100.0
//!
//! [robot]
//! x = 0.0
//! y = 0.0
//! theta_deg = 0.0
//!
//! [[waypoints]]
//! x = -10.0
//! y = -28.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Arena, StarTarget, World, WorldConfig, DEFAULT_REACH_THRESHOLD_CM, DEFAULT_TICK_DT};
use crate::kinematics::Pose;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario")]
    Io(#[from] std::io::Error),
    #[error("parsing scenario")]
    Toml(#[from] toml::de::Error),
    #[error("scenario has no waypoints")]
    NoWaypoints,
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotStart {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(default = "default_outer_radius")]
    pub outer_radius: f64,
    #[serde(default)]
    pub orientation_deg: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            outer_radius: default_outer_radius(),
            orientation_deg: 0.0,
        }
    }
}

/// A target location. The target jumps here once the previous waypoint is
/// reached or, if set, once the clock passes `activate_at` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activate_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default = "default_tick")]
    pub tick_dt: f64,
    #[serde(default = "default_threshold")]
    pub reach_threshold_cm: f64,
    pub arena: Arena,
    pub robot: RobotStart,
    #[serde(default)]
    pub target: TargetSpec,
    pub waypoints: Vec<Waypoint>,
}

fn default_outer_radius() -> f64 {
    2.5
}
fn one() -> f64 {
    1.0
}
fn default_tick() -> f64 {
    DEFAULT_TICK_DT
}
fn default_threshold() -> f64 {
    DEFAULT_REACH_THRESHOLD_CM
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario always serializes")
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.waypoints.is_empty() {
            return Err(ScenarioError::NoWaypoints);
        }
        let a = &self.arena;
        if !(a.x_min < a.x_max && a.y_min < a.y_max) {
            return Err(ScenarioError::Invalid("empty arena".into()));
        }
        if !(self.tick_dt > 0.0 && self.tick_dt.is_finite()) {
            return Err(ScenarioError::Invalid(format!("tick_dt {}", self.tick_dt)));
        }
        if !(self.reach_threshold_cm > 0.0) {
            return Err(ScenarioError::Invalid(format!("reach_threshold_cm {}", self.reach_threshold_cm)));
        }
        if !(self.target.outer_radius > 0.0) {
            return Err(ScenarioError::Invalid(format!("outer_radius {}", self.target.outer_radius)));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(ScenarioError::Invalid(format!("noise_scale {}", self.noise_scale)));
        }
        Ok(())
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            tick_dt: self.tick_dt,
            noise_scale: self.noise_scale,
            ..WorldConfig::default()
        }
    }

    /// A world with the target at the first waypoint.
    pub fn build_world(&self) -> World {
        self.build_world_with_seed(self.seed)
    }

    pub fn build_world_with_seed(&self, seed: u64) -> World {
        let wp = self.waypoints[0];
        World::new(
            Pose::new(self.robot.x, self.robot.y, self.robot.theta_deg.to_radians()),
            StarTarget {
                position: [wp.x, wp.y],
                outer_radius: self.target.outer_radius,
                orientation: self.target.orientation_deg.to_radians(),
            },
            self.arena,
            self.world_config(),
            seed,
        )
    }
}
