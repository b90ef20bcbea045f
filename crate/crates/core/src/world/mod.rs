//! Simulated arena: robot pose, star target, clock and camera.
//!
//! The world is advanced either by actuation segments (vibration on, pose
//! integrated every tick) or by image captures (vibration off, clock advanced
//! by the pipeline latency). Both append to the shared telemetry log.

pub mod camera;
pub mod raster;
pub mod scenario;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ModeName;
use crate::kinematics::{integrate_pose, KinematicsError, Pose, TrajectorySample};
use crate::resonance::{sample_body_velocity, ModeTable, MotionMode, ResonanceError};
use crate::rng::{streams, NoiseRng};
use crate::telemetry::{Event, TelemetryLog};

pub use camera::{CameraImage, CameraModel};
pub use scenario::{Scenario, ScenarioError, Waypoint};

/// Robot body diameter is 3 cm; the marks sit on its rim.
pub const MARK_HALF_WIDTH_CM: f64 = 1.5;
pub const DEFAULT_TICK_DT: f64 = 1.0 / 30.0;
pub const DEFAULT_REACH_THRESHOLD_CM: f64 = 2.0;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Resonance(#[from] ResonanceError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("vibration requested while an image capture is in progress")]
    CaptureInProgress,
    #[error("actuation duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("no capture in progress")]
    NoCapture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Arena {
    pub fn square(half: f64) -> Self {
        Self {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
        }
    }

    fn clamp(&self, x: f64, y: f64) -> (f64, f64, bool) {
        let cx = x.clamp(self.x_min, self.x_max);
        let cy = y.clamp(self.y_min, self.y_max);
        (cx, cy, cx != x || cy != y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarTarget {
    pub position: [f64; 2],
    pub outer_radius: f64,
    pub orientation: f64,
}

/// Vision pipeline duration, seconds: `max(min_s, N(mean_s, sd_s))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub mean_s: f64,
    pub sd_s: f64,
    pub min_s: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            mean_s: 3.59,
            sd_s: 0.12,
            min_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub tick_dt: f64,
    /// Multiplies every mode's noise scales; 0 gives deterministic motion.
    pub noise_scale: f64,
    pub camera: CameraModel,
    pub latency: LatencyModel,
    /// Emit a pose frame every this many ticks while actuating; 0 emits only
    /// at segment ends.
    pub pose_every_ticks: u32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            tick_dt: DEFAULT_TICK_DT,
            noise_scale: 1.0,
            camera: CameraModel::default(),
            latency: LatencyModel::default(),
            pose_every_ticks: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationSegment {
    pub t0: f64,
    pub t1: f64,
    pub freq_khz: u32,
    pub mode: Option<ModeName>,
}

#[derive(Debug, Clone)]
pub struct ActuationOutcome {
    pub segment: ActuationSegment,
    /// Tracking data: the starting pose followed by one sample per tick.
    pub samples: Vec<TrajectorySample>,
    /// The stop condition ended the segment before its full duration.
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct Capture {
    pub image: CameraImage,
    pub t0: f64,
    pub t1: f64,
    /// Ground-truth image column of the star center, output pixels; `None`
    /// when it is behind the camera.
    pub star_column: Option<f64>,
}

impl Capture {
    pub fn latency(&self) -> f64 {
        self.t1 - self.t0
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub robot: Pose,
    pub target: StarTarget,
    pub bounds: Arena,
    pub config: WorldConfig,
    clock: f64,
    seed: u64,
    vibration_on: bool,
    capturing: Option<f64>,
    in_contact: bool,
    motion_rng: NoiseRng,
    latency_rng: NoiseRng,
    telemetry: TelemetryLog,
}

impl World {
    pub fn new(robot: Pose, target: StarTarget, bounds: Arena, config: WorldConfig, seed: u64) -> Self {
        Self {
            robot,
            target,
            bounds,
            config,
            clock: 0.0,
            seed,
            vibration_on: false,
            capturing: None,
            in_contact: false,
            motion_rng: NoiseRng::new(seed, streams::MOTION),
            latency_rng: NoiseRng::new(seed, streams::LATENCY),
            telemetry: TelemetryLog::new(),
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vibration_on(&self) -> bool {
        self.vibration_on
    }

    pub fn is_capturing(&self) -> bool {
        self.capturing.is_some()
    }

    pub fn telemetry(&self) -> &TelemetryLog {
        &self.telemetry
    }

    /// Route this world's frames into an existing log.
    pub fn set_telemetry(&mut self, log: TelemetryLog) {
        self.telemetry = log;
    }

    pub fn sample_now(&self) -> TrajectorySample {
        let (l, r) = self.robot.marks(MARK_HALF_WIDTH_CM);
        TrajectorySample {
            t: self.clock,
            mark_left: l,
            mark_right: r,
        }
    }

    /// Let the clock run with the actuator off (idle time).
    pub fn idle(&mut self, seconds: f64) {
        if seconds > 0.0 {
            self.vibration_on = false;
            self.clock += seconds;
        }
    }

    /// Drive the actuator at `freq_khz` for `duration` seconds.
    pub fn step_actuation(
        &mut self,
        table: &ModeTable,
        freq_khz: u32,
        duration: f64,
    ) -> Result<ActuationOutcome, WorldError> {
        self.step_actuation_with(table, freq_khz, duration, None, |_| false)
    }

    /// Like [`World::step_actuation`], tagging the segment with `mode` and
    /// ending it after the first tick at which `stop` returns true.
    pub fn step_actuation_with<F>(
        &mut self,
        table: &ModeTable,
        freq_khz: u32,
        duration: f64,
        mode: Option<ModeName>,
        mut stop: F,
    ) -> Result<ActuationOutcome, WorldError>
    where
        F: FnMut(&World) -> bool,
    {
        if self.capturing.is_some() {
            return Err(WorldError::CaptureInProgress);
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(WorldError::InvalidDuration(duration));
        }
        let base = table.lookup(freq_khz)?;
        let noisy = self.config.noise_scale > 0.0 && (base.sigma_heading > 0.0 || base.sigma_speed > 0.0);
        let mode_for_sampling = MotionMode {
            sigma_heading: base.sigma_heading * self.config.noise_scale,
            sigma_speed: base.sigma_speed * self.config.noise_scale,
            ..base.clone()
        };

        let dt = self.config.tick_dt;
        let ticks = ((duration / dt).round() as u64).max(1);
        let t0 = self.clock;
        let mut samples = Vec::with_capacity(ticks as usize + 1);
        samples.push(self.sample_now());
        self.vibration_on = true;
        let mut stopped_early = false;

        for k in 1..=ticks {
            let u = if noisy {
                sample_body_velocity(&mode_for_sampling, dt, &mut self.motion_rng)
            } else {
                base.velocity()
            };
            let next = integrate_pose(self.robot, u, dt)?;
            let (x, y, hit) = self.bounds.clamp(next.x_c, next.y_c);
            self.robot = Pose::new(x, y, next.theta);
            self.clock = t0 + k as f64 * dt;
            if hit && !self.in_contact {
                self.telemetry.append(self.clock, Event::Contact { x_c: x, y_c: y });
            }
            self.in_contact = hit;
            samples.push(self.sample_now());
            if self.config.pose_every_ticks > 0 && k % self.config.pose_every_ticks as u64 == 0 {
                self.log_pose();
            }
            if k < ticks && stop(self) {
                stopped_early = true;
                break;
            }
        }

        self.vibration_on = false;
        let segment = ActuationSegment {
            t0,
            t1: self.clock,
            freq_khz,
            mode,
        };
        self.telemetry.append(
            self.clock,
            Event::Segment {
                t0,
                t1: self.clock,
                freq_khz,
                mode,
            },
        );
        self.log_pose();
        Ok(ActuationOutcome {
            segment,
            samples,
            stopped_early,
        })
    }

    fn log_pose(&self) {
        self.telemetry.append(
            self.clock,
            Event::Pose {
                x_c: self.robot.x_c,
                y_c: self.robot.y_c,
                theta: self.robot.theta,
            },
        );
    }

    /// Pause vibration and start the vision pipeline.
    pub fn begin_capture(&mut self) -> Result<(), WorldError> {
        if self.capturing.is_some() {
            return Err(WorldError::CaptureInProgress);
        }
        self.vibration_on = false;
        self.capturing = Some(self.clock);
        Ok(())
    }

    /// Render the frame and advance the clock by a sampled pipeline latency.
    pub fn finish_capture(&mut self) -> Result<Capture, WorldError> {
        let t0 = self.capturing.take().ok_or(WorldError::NoCapture)?;
        let image = self.render();
        let star_column = self
            .config
            .camera
            .project_star(&self.robot, self.target.position, self.target.outer_radius, self.target.orientation)
            .map(|s| s.cx / camera::SUPERSAMPLE as f64);
        let lat = self.config.latency;
        let latency = self.latency_rng.normal(lat.mean_s, lat.sd_s).max(lat.min_s);
        self.clock = t0 + latency;
        self.telemetry.append(self.clock, Event::Capture { t0, t1: self.clock });
        Ok(Capture {
            image,
            t0,
            t1: self.clock,
            star_column,
        })
    }

    pub fn capture_image(&mut self) -> Result<Capture, WorldError> {
        self.begin_capture()?;
        self.finish_capture()
    }

    /// What the camera sees right now. Pure: no clock or state change.
    pub fn render(&self) -> CameraImage {
        self.config.camera.render(
            &self.robot,
            self.target.position,
            self.target.outer_radius,
            self.target.orientation,
        )
    }

    pub fn target_distance(&self) -> f64 {
        self.robot.distance_to(self.target.position)
    }

    /// Signed bearing of the target from the heading, CCW positive.
    pub fn heading_error(&self) -> f64 {
        self.robot.bearing_to(self.target.position)
    }

    pub fn target_reached(&self, threshold_cm: f64) -> bool {
        self.target_distance() <= threshold_cm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(noise: f64) -> World {
        World::new(
            Pose::new(0.0, 0.0, 0.0),
            StarTarget {
                position: [20.0, 0.0],
                outer_radius: 2.5,
                orientation: 0.0,
            },
            Arena::square(200.0),
            WorldConfig {
                noise_scale: noise,
                ..WorldConfig::default()
            },
            11,
        )
    }

    #[test]
    fn no_motion_band_leaves_pose_unchanged() {
        let table = ModeTable::default_calibration();
        let mut w = world(1.0);
        let out = w.step_actuation(&table, 20, 5.0).unwrap();
        assert_eq!(w.robot, Pose::new(0.0, 0.0, 0.0));
        assert_eq!(out.samples.len(), 151);
        assert!((w.clock() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn five_khz_goes_straight() {
        let table = ModeTable::default_calibration();
        let mut w = world(0.0);
        w.step_actuation(&table, 5, 2.0).unwrap();
        assert!((w.robot.x_c - 5.0).abs() < 1e-9);
        assert!(w.robot.y_c.abs() < 1e-12);
        assert!(w.robot.theta.abs() < 1e-3);
    }

    #[test]
    fn alternating_58_59_scouts_in_place() {
        let table = ModeTable::default_calibration();
        let mut w = world(0.0);
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        let mut unwrapped = 0.0;
        let mut prev = w.robot.theta;
        for _ in 0..10 {
            for f in [58, 59] {
                for s in w.step_actuation(&table, f, 6.0).unwrap().samples {
                    let th = crate::kinematics::marks_to_pose(&s).unwrap().theta;
                    unwrapped += crate::kinematics::wrap_angle(th - prev);
                    prev = th;
                    lo = lo.min(unwrapped);
                    hi = hi.max(unwrapped);
                }
            }
        }
        assert!(w.robot.x_c.hypot(w.robot.y_c) < 1.0);
        assert!((hi - lo).to_degrees() >= 90.0);
    }

    #[test]
    fn capture_pauses_vibration_and_advances_clock() {
        let table = ModeTable::default_calibration();
        let mut w = world(0.0);
        w.begin_capture().unwrap();
        assert!(!w.vibration_on());
        assert!(matches!(w.step_actuation(&table, 5, 1.0), Err(WorldError::CaptureInProgress)));
        assert!(matches!(w.begin_capture(), Err(WorldError::CaptureInProgress)));
        let before = w.robot;
        let cap = w.finish_capture().unwrap();
        assert_eq!(w.robot, before);
        assert!(cap.latency() >= 0.1);
        assert_eq!(w.clock(), cap.t1);
        assert!(matches!(w.finish_capture(), Err(WorldError::NoCapture)));
    }

    #[test]
    fn actuation_never_moves_target() {
        let table = ModeTable::default_calibration();
        let mut w = world(1.0);
        let target = w.target;
        w.step_actuation(&table, 9, 3.0).unwrap();
        assert_eq!(w.target, target);
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = world(1.0);
        let b = world(1.0);
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn bounds_clamp_emits_contact() {
        let table = ModeTable::default_calibration();
        let mut w = world(0.0);
        w.bounds = Arena::square(3.0);
        w.step_actuation(&table, 5, 4.0).unwrap();
        assert_eq!(w.robot.x_c, 3.0);
        let contacts = w
            .telemetry()
            .snapshot()
            .into_iter()
            .filter(|f| matches!(f.event, Event::Contact { .. }))
            .count();
        assert_eq!(contacts, 1);
    }

    #[test]
    fn stop_condition_truncates_segment() {
        let table = ModeTable::default_calibration();
        let mut w = world(0.0);
        let out = w
            .step_actuation_with(&table, 5, 20.0, Some(ModeName::Straight), |w| w.target_reached(2.0))
            .unwrap();
        assert!(out.stopped_early);
        assert!(w.target_reached(2.0));
        assert!(out.segment.t1 < 20.0);
        assert_eq!(out.segment.mode, Some(ModeName::Straight));
    }

    #[test]
    fn target_reached_examples() {
        let mut w = world(0.0);
        w.target.position = [0.0, 1.0];
        assert!(w.target_reached(2.0));
        w.target.position = [10.0, 0.0];
        assert!(!w.target_reached(2.0));
    }

    #[test]
    fn invalid_requests() {
        let table = ModeTable::default_calibration();
        let mut w = world(0.0);
        assert!(matches!(w.step_actuation(&table, 0, 1.0), Err(WorldError::Resonance(_))));
        assert!(matches!(w.step_actuation(&table, 5, 0.0), Err(WorldError::InvalidDuration(_))));
    }
}
