//! Autonomous capture, classify and actuate cycles, and whole missions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{zone_to_mode, ControllerState, ModeName, Phase};
use crate::kinematics::{Pose, TrajectorySample};
use crate::resonance::ModeTable;
use crate::telemetry::Event;
use crate::vision::{ZoneClassifier, ZoneLabel};
use crate::world::{ActuationSegment, Scenario, Waypoint, World, WorldError};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("autonomous cycle requested in {0:?} phase")]
    NotAutonomous(Phase),
    #[error("mode {0} is not registered")]
    Unregistered(ModeName),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointHit {
    pub index: usize,
    pub cycle: u32,
    pub t: f64,
    pub reached: bool,
}

/// The ordered list of target locations for a mission.
#[derive(Debug, Clone)]
pub struct TargetSchedule {
    waypoints: Vec<Waypoint>,
    current: usize,
    threshold_cm: f64,
    hits: Vec<WaypointHit>,
}

impl TargetSchedule {
    pub fn new(waypoints: Vec<Waypoint>, threshold_cm: f64) -> Self {
        assert!(!waypoints.is_empty(), "a schedule needs at least one waypoint");
        Self {
            waypoints,
            current: 0,
            threshold_cm,
            hits: Vec::new(),
        }
    }

    pub fn single(target: [f64; 2], threshold_cm: f64) -> Self {
        Self::new(
            vec![Waypoint {
                x: target[0],
                y: target[1],
                activate_at: None,
            }],
            threshold_cm,
        )
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        Self::new(s.waypoints.clone(), s.reach_threshold_cm)
    }

    pub fn threshold_cm(&self) -> f64 {
        self.threshold_cm
    }

    pub fn current_index(&self) -> usize {
        self.current
    }

    pub fn is_done(&self) -> bool {
        self.current >= self.waypoints.len()
    }

    pub fn all_reached(&self) -> bool {
        self.is_done() && self.hits.iter().all(|h| h.reached)
    }

    pub fn hits(&self) -> &[WaypointHit] {
        &self.hits
    }

    fn place(&self, world: &mut World) {
        if let Some(wp) = self.waypoints.get(self.current) {
            world.target.position = [wp.x, wp.y];
            world.telemetry().append(
                world.clock(),
                Event::Target {
                    index: self.current,
                    x: wp.x,
                    y: wp.y,
                },
            );
        }
    }

    /// Put the world's target at the current waypoint.
    pub fn install(&self, world: &mut World) {
        self.place(world);
    }

    /// Move past waypoints whose successor's activation time has come.
    pub fn apply_timed(&mut self, world: &mut World, cycle: u32) {
        let mut moved = false;
        while let Some(next) = self.waypoints.get(self.current + 1) {
            match next.activate_at {
                Some(at) if at <= world.clock() => {
                    self.hits.push(WaypointHit {
                        index: self.current,
                        cycle,
                        t: world.clock(),
                        reached: false,
                    });
                    self.current += 1;
                    moved = true;
                }
                _ => break,
            }
        }
        if moved {
            self.place(world);
        }
    }

    /// Record a hit and advance if the robot is at the current waypoint.
    pub fn check_reached(&mut self, world: &mut World, cycle: u32) -> bool {
        if self.is_done() || !world.target_reached(self.threshold_cm) {
            return false;
        }
        self.hits.push(WaypointHit {
            index: self.current,
            cycle,
            t: world.clock(),
            reached: true,
        });
        self.current += 1;
        self.place(world);
        true
    }
}

/// Everything observed during one autonomous cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u32,
    pub target_index: usize,
    pub capture_t0: f64,
    pub capture_t1: f64,
    pub label: ZoneLabel,
    pub mode: ModeName,
    pub freq_khz: u32,
    pub segment_t0: f64,
    pub segment_t1: f64,
    /// Signed bearing of the target at capture time (CCW positive), rad.
    pub heading_error: f64,
    pub distance: f64,
    /// The target lay inside the camera's field of view at capture time.
    pub in_view: bool,
    pub heading_error_after: f64,
    pub distance_after: f64,
    pub reached: bool,
}

/// One cycle: pause, capture, classify, actuate the registered mode.
pub fn autonomous_cycle<C: ZoneClassifier + ?Sized>(
    st: &mut ControllerState,
    world: &mut World,
    table: &ModeTable,
    classifier: &mut C,
    schedule: &mut TargetSchedule,
) -> Result<(CycleRecord, Vec<TrajectorySample>), MissionError> {
    if st.phase != Phase::Autonomous {
        return Err(MissionError::NotAutonomous(st.phase));
    }
    let cycle = st.cycle_count + 1;
    schedule.apply_timed(world, cycle);
    let heading_error = world.heading_error();
    let distance = world.target_distance();
    let half_fov = world.config.camera.fov_deg.to_radians() / 2.0;
    let in_view = heading_error.abs() < half_fov;

    let capture = world.capture_image()?;
    let label = classifier.classify(&capture);
    let mode = zone_to_mode(label);
    world.telemetry().append(
        world.clock(),
        Event::Classification {
            label: label.into(),
            mode,
        },
    );
    let entry = st.registry.get(mode).ok_or(MissionError::Unregistered(mode))?;
    let threshold = schedule.threshold_cm();
    let outcome =
        world.step_actuation_with(table, entry.freq_khz, entry.duration_s(), Some(mode), |w| w.target_reached(threshold))?;
    st.cycle_count = cycle;

    let heading_error_after = world.heading_error();
    let distance_after = world.target_distance();
    let target_index = schedule.current_index();
    let reached = schedule.check_reached(world, cycle);
    if schedule.is_done() || st.cycle_count >= st.max_cycles {
        st.phase = Phase::Finished;
    }
    Ok((
        CycleRecord {
            cycle,
            target_index,
            capture_t0: capture.t0,
            capture_t1: capture.t1,
            label,
            mode,
            freq_khz: entry.freq_khz,
            segment_t0: outcome.segment.t0,
            segment_t1: outcome.segment.t1,
            heading_error,
            distance,
            in_view,
            heading_error_after,
            distance_after,
            reached,
        },
        outcome.samples,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionOutcome {
    Reached,
    BudgetExhausted,
}

impl MissionOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            MissionOutcome::Reached => "reached",
            MissionOutcome::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureInterval {
    pub t0: f64,
    pub t1: f64,
    pub label: ZoneLabel,
}

/// A turn whose heading error flipped sign by the next turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverCorrection {
    pub cycle: u32,
    pub mode: ModeName,
    /// Heading error at the capture before the turn.
    pub heading_error: f64,
    /// Heading error once the turn finished.
    pub heading_error_after: f64,
    /// Mode chosen by the following cycle on the same target.
    pub next_mode: Option<ModeName>,
}

impl OverCorrection {
    /// The following cycle turned back the other way.
    pub fn alternates(&self) -> bool {
        matches!(
            (self.mode, self.next_mode),
            (ModeName::Left, Some(ModeName::Right)) | (ModeName::Right, Some(ModeName::Left))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub outcome: MissionOutcome,
    pub cycles: u32,
    pub segments: Vec<ActuationSegment>,
    pub captures: Vec<CaptureInterval>,
    #[serde(default)]
    pub trajectory_csv_path: Option<String>,
    pub waypoints: Vec<WaypointHit>,
    pub over_correction_events: Vec<OverCorrection>,
    pub final_pose: Pose,
    pub cycle_log: Vec<CycleRecord>,
}

impl MissionReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("mission reports always serialize")
    }

    /// Number of leading SEARCH cycles.
    pub fn leading_search_cycles(&self) -> usize {
        self.cycle_log.iter().take_while(|c| c.mode == ModeName::Search).count()
    }

    /// True when, for each target, the largest `|heading error|` in each
    /// block of `window` in-view cycles is no larger than in the block before
    /// it (plus `tol`).
    pub fn heading_error_nonincreasing(&self, window: usize, tol: f64) -> bool {
        assert!(window > 0);
        let targets = self.cycle_log.iter().map(|c| c.target_index).max().map_or(0, |m| m + 1);
        (0..targets).all(|t| {
            let errs: Vec<f64> = self
                .cycle_log
                .iter()
                .filter(|c| c.target_index == t)
                .skip_while(|c| !c.in_view)
                .map(|c| c.heading_error.abs())
                .collect();
            let peaks: Vec<f64> = errs.chunks(window).map(|b| b.iter().cloned().fold(0.0, f64::max)).collect();
            peaks.windows(2).all(|p| p[1] <= p[0] + tol)
        })
    }
}

fn is_turn(m: ModeName) -> bool {
    matches!(m, ModeName::Left | ModeName::Right)
}

/// LEFT/RIGHT cycles whose turn carried the heading error past zero, so the
/// error after the turn has the opposite sign to the error before it.
pub fn over_corrections(log: &[CycleRecord]) -> Vec<OverCorrection> {
    log.iter()
        .enumerate()
        .filter(|(_, c)| is_turn(c.mode) && !c.reached && c.heading_error * c.heading_error_after < 0.0)
        .map(|(i, c)| OverCorrection {
            cycle: c.cycle,
            mode: c.mode,
            heading_error: c.heading_error,
            heading_error_after: c.heading_error_after,
            next_mode: log.get(i + 1).filter(|n| n.target_index == c.target_index).map(|n| n.mode),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MissionRun {
    pub report: MissionReport,
    pub trajectory: Vec<TrajectorySample>,
}

/// Accumulates cycle records into a [`MissionRun`].
#[derive(Debug, Clone, Default)]
pub struct MissionRecorder {
    trajectory: Vec<TrajectorySample>,
    log: Vec<CycleRecord>,
}

impl MissionRecorder {
    pub fn start(world: &World) -> Self {
        Self {
            trajectory: vec![world.sample_now()],
            log: Vec::new(),
        }
    }

    pub fn record(&mut self, rec: CycleRecord, samples: Vec<TrajectorySample>) {
        self.trajectory.extend(samples);
        self.log.push(rec);
    }

    pub fn cycles(&self) -> &[CycleRecord] {
        &self.log
    }

    /// Close the mission, emitting the outcome to telemetry.
    pub fn finish(self, st: &ControllerState, world: &World, schedule: &TargetSchedule) -> MissionRun {
        let outcome = if schedule.all_reached() {
            MissionOutcome::Reached
        } else {
            MissionOutcome::BudgetExhausted
        };
        world.telemetry().append(
            world.clock(),
            Event::Mission {
                outcome: outcome.as_str().to_string(),
                cycles: st.cycle_count,
            },
        );
        world.telemetry().append(world.clock(), Event::Phase { phase: st.phase });
        let segments = self
            .log
            .iter()
            .map(|r| ActuationSegment {
                t0: r.segment_t0,
                t1: r.segment_t1,
                freq_khz: r.freq_khz,
                mode: Some(r.mode),
            })
            .collect();
        let captures = self
            .log
            .iter()
            .map(|r| CaptureInterval {
                t0: r.capture_t0,
                t1: r.capture_t1,
                label: r.label,
            })
            .collect();
        MissionRun {
            report: MissionReport {
                outcome,
                cycles: st.cycle_count,
                segments,
                captures,
                trajectory_csv_path: None,
                waypoints: schedule.hits().to_vec(),
                over_correction_events: over_corrections(&self.log),
                final_pose: world.robot,
                cycle_log: self.log,
            },
            trajectory: self.trajectory,
        }
    }
}

/// Run cycles until every waypoint is handled or the cycle budget is spent.
pub fn run_mission<C: ZoneClassifier + ?Sized>(
    st: &mut ControllerState,
    world: &mut World,
    table: &ModeTable,
    classifier: &mut C,
    schedule: &mut TargetSchedule,
) -> Result<MissionRun, MissionError> {
    if st.phase != Phase::Autonomous {
        return Err(MissionError::NotAutonomous(st.phase));
    }
    schedule.install(world);
    let mut recorder = MissionRecorder::start(world);
    schedule.check_reached(world, 0);
    if schedule.is_done() {
        st.phase = Phase::Finished;
    }
    while st.phase == Phase::Autonomous {
        let (rec, samples) = autonomous_cycle(st, world, table, classifier, schedule)?;
        recorder.record(rec, samples);
    }
    Ok(recorder.finish(st, world, schedule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ParameterSet;
    use crate::vision::GroundTruthClassifier;
    use crate::world::{Arena, StarTarget, WorldConfig};

    fn setup(target: [f64; 2], set: ParameterSet) -> (ControllerState, World, TargetSchedule) {
        let world = World::new(
            Pose::new(0.0, 0.0, 0.0),
            StarTarget {
                position: target,
                outer_radius: 2.5,
                orientation: 0.0,
            },
            Arena::square(200.0),
            WorldConfig {
                noise_scale: 0.0,
                ..WorldConfig::default()
            },
            1,
        );
        let mut st = ControllerState::default().with_registry(set.registry);
        st.start_autonomy().unwrap();
        (st, world, TargetSchedule::single(target, 2.0))
    }

    #[test]
    fn dead_ahead_is_straight_only() {
        let (mut st, mut w, mut s) = setup([30.0, 0.0], ParameterSet::set1());
        let run = run_mission(&mut st, &mut w, &ModeTable::default_calibration(), &mut GroundTruthClassifier, &mut s).unwrap();
        assert_eq!(run.report.outcome, MissionOutcome::Reached);
        assert!(run.report.cycle_log.iter().all(|c| c.mode == ModeName::Straight));
        assert!(run.report.segments.iter().all(|s| s.freq_khz == 5));
        assert_eq!(st.phase, Phase::Finished);
    }

    #[test]
    fn left_target_triggers_left_mode() {
        let (mut st, mut w, mut s) = setup([20.0, 8.0], ParameterSet::set1());
        let (rec, _) =
            autonomous_cycle(&mut st, &mut w, &ModeTable::default_calibration(), &mut GroundTruthClassifier, &mut s).unwrap();
        assert_eq!(rec.mode, ModeName::Left);
        assert_eq!(rec.freq_khz, 11);
        assert!((rec.segment_t1 - rec.segment_t0 - 1.0).abs() < 1e-9);
        assert!(rec.segment_t0 >= rec.capture_t1);
    }

    #[test]
    fn invisible_target_triggers_search() {
        let (mut st, mut w, mut s) = setup([-30.0, 0.0], ParameterSet::set1());
        let (rec, _) =
            autonomous_cycle(&mut st, &mut w, &ModeTable::default_calibration(), &mut GroundTruthClassifier, &mut s).unwrap();
        assert_eq!((rec.mode, rec.freq_khz), (ModeName::Search, 57));
    }

    #[test]
    fn budget_exhaustion_is_an_outcome() {
        let (mut st, mut w, mut s) = setup([-30.0, 0.0], ParameterSet::set1());
        st.max_cycles = 3;
        let run = run_mission(&mut st, &mut w, &ModeTable::default_calibration(), &mut GroundTruthClassifier, &mut s).unwrap();
        assert_eq!(run.report.outcome, MissionOutcome::BudgetExhausted);
        assert_eq!(run.report.cycles, 3);
        assert!(matches!(
            autonomous_cycle(&mut st, &mut w, &ModeTable::default_calibration(), &mut GroundTruthClassifier, &mut s),
            Err(MissionError::NotAutonomous(Phase::Finished))
        ));
    }

    #[test]
    fn over_correction_detection() {
        let rec = |cycle, mode, e, after| CycleRecord {
            cycle,
            target_index: 0,
            capture_t0: 0.0,
            capture_t1: 0.0,
            label: ZoneLabel::Left,
            mode,
            freq_khz: 0,
            segment_t0: 0.0,
            segment_t1: 0.0,
            heading_error: e,
            distance: 10.0,
            in_view: true,
            heading_error_after: after,
            distance_after: 10.0,
            reached: false,
        };
        let log = [
            rec(1, ModeName::Left, 0.3, -0.2),
            rec(2, ModeName::Right, -0.2, 0.05),
            rec(3, ModeName::Straight, 0.05, 0.1),
            rec(4, ModeName::Left, 0.2, 0.1),
            rec(5, ModeName::Search, 0.9, 1.0),
        ];
        let oc = over_corrections(&log);
        assert_eq!(oc.len(), 2);
        assert_eq!((oc[0].cycle, oc[0].next_mode), (1, Some(ModeName::Right)));
        assert!(oc[0].alternates());
        assert_eq!((oc[1].cycle, oc[1].next_mode), (2, Some(ModeName::Straight)));
        assert!(!oc[1].alternates());
    }

    #[test]
    fn heading_error_blocks() {
        let mut report = MissionReport {
            outcome: MissionOutcome::Reached,
            cycles: 0,
            segments: vec![],
            captures: vec![],
            trajectory_csv_path: None,
            waypoints: vec![],
            over_correction_events: vec![],
            final_pose: Pose::new(0.0, 0.0, 0.0),
            cycle_log: vec![],
        };
        let errs = [9.0, 1.0, 0.4, 0.5, 0.2, 0.3];
        report.cycle_log = errs
            .iter()
            .enumerate()
            .map(|(i, &e)| CycleRecord {
                cycle: i as u32 + 1,
                target_index: 0,
                capture_t0: 0.0,
                capture_t1: 0.0,
                label: ZoneLabel::Middle,
                mode: ModeName::Straight,
                freq_khz: 5,
                segment_t0: 0.0,
                segment_t1: 0.0,
                heading_error: e,
                distance: 1.0,
                in_view: i > 0,
                heading_error_after: e,
                distance_after: 1.0,
                reached: false,
            })
            .collect();
        // blocks of 2 after the first in-view cycle: [1, .4] [.5, .2] [.3]
        assert!(report.heading_error_nonincreasing(2, 0.0));
        assert!(!report.heading_error_nonincreasing(1, 0.0));
        assert!(report.heading_error_nonincreasing(1, 0.11));
    }
}
