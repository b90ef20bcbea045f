//! Operator command state machine and the autonomous tracking loop.
//!
//! Command codes:
//!
//! | code      | meaning                                             |
//! |-----------|-----------------------------------------------------|
//! | 0         | stop actuation                                      |
//! | 1..=100   | actuate continuously at that many kHz               |
//! | 101       | enter autonomous mode (registry must be complete)   |
//! | 102       | abort back to characterization                      |
//! | 103..=106 | register current frequency to STRAIGHT/LEFT/RIGHT/SEARCH |
//! | 203..=206 | arm the duration of STRAIGHT/LEFT/RIGHT/SEARCH; the next code N in 1..=100 sets it to N x 100 ms |

pub mod mission;
pub mod params;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resonance::{MAX_FREQ_KHZ, MIN_FREQ_KHZ};
use crate::telemetry::{Event, TelemetryLog};
use crate::vision::ZoneLabel;

pub use mission::{
    autonomous_cycle, run_mission, CycleRecord, MissionError, MissionOutcome, MissionRecorder, MissionReport, MissionRun,
    TargetSchedule,
};
pub use params::{ParameterSet, ParamsError};

pub const CODE_IDLE: u8 = 0;
pub const CODE_AUTONOMOUS: u8 = 101;
pub const CODE_ABORT: u8 = 102;
pub const ARM_TIMEOUT_S: f64 = 5.0;
pub const DEFAULT_MAX_CYCLES: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModeName {
    Straight,
    Left,
    Right,
    Search,
}

impl ModeName {
    /// Registry order, matching codes 103..=106 and 203..=206.
    pub const ALL: [ModeName; 4] = [ModeName::Straight, ModeName::Left, ModeName::Right, ModeName::Search];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn register_code(self) -> u8 {
        103 + self as u8
    }

    pub fn arm_code(self) -> u8 {
        203 + self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModeName::Straight => "STRAIGHT",
            ModeName::Left => "LEFT",
            ModeName::Right => "RIGHT",
            ModeName::Search => "SEARCH",
        }
    }
}

impl fmt::Display for ModeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The mode actuated for a classified zone.
pub fn zone_to_mode(z: ZoneLabel) -> ModeName {
    match z {
        ZoneLabel::Left => ModeName::Left,
        ZoneLabel::Middle => ModeName::Straight,
        ZoneLabel::Right => ModeName::Right,
        ZoneLabel::Outside => ModeName::Search,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Characterization,
    Autonomous,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisteredMode {
    pub freq_khz: u32,
    pub duration_ms: u32,
}

impl RegisteredMode {
    pub fn duration_s(&self) -> f64 {
        self.duration_ms as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrySlot {
    pub freq_khz: Option<u32>,
    pub duration_ms: Option<u32>,
}

/// Frequency and duration bound to each of the four modes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeRegistry {
    slots: [RegistrySlot; 4],
}

impl ModeRegistry {
    pub fn slot(&self, mode: ModeName) -> RegistrySlot {
        self.slots[mode.slot()]
    }

    /// The complete entry for `mode`, if both values are registered.
    pub fn get(&self, mode: ModeName) -> Option<RegisteredMode> {
        let s = self.slot(mode);
        Some(RegisteredMode {
            freq_khz: s.freq_khz?,
            duration_ms: s.duration_ms?,
        })
    }

    pub fn set(&mut self, mode: ModeName, entry: RegisteredMode) {
        self.slots[mode.slot()] = RegistrySlot {
            freq_khz: Some(entry.freq_khz),
            duration_ms: Some(entry.duration_ms),
        };
    }

    pub fn missing(&self) -> Vec<ModeName> {
        ModeName::ALL.into_iter().filter(|&m| self.get(m).is_none()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.missing().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("code {0} is reserved")]
    Reserved(u8),
    #[error("code {code} not accepted in {phase:?} phase")]
    WrongPhase { code: u8, phase: Phase },
    #[error("cannot enter autonomous mode, incomplete: {}", mode_list(.0))]
    IncompleteRegistry(Vec<ModeName>),
    #[error("no current frequency to register")]
    NoCurrentFrequency,
    #[error("duration argument must be 1..=100, got {0}")]
    InvalidDuration(u8),
}

fn mode_list(modes: &[ModeName]) -> String {
    modes.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", ")
}

/// What the caller must do after a command is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Actuate { freq_khz: u32 },
    Stop,
    Registered { mode: ModeName, freq_khz: u32 },
    Armed { mode: ModeName },
    DurationSet { mode: ModeName, duration_ms: u32 },
    StartAutonomy,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub phase: Phase,
    pub current_freq: Option<u32>,
    pub registry: ModeRegistry,
    pub cycle_count: u32,
    pub max_cycles: u32,
    /// Mode awaiting a duration argument and the time it was armed.
    pub armed: Option<(ModeName, f64)>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_CYCLES)
    }
}

impl ControllerState {
    pub fn new(max_cycles: u32) -> Self {
        Self {
            phase: Phase::Characterization,
            current_freq: None,
            registry: ModeRegistry::default(),
            cycle_count: 0,
            max_cycles,
            armed: None,
        }
    }

    /// Apply one command code received at time `now`. On error the state
    /// is left as it was, except that a pending duration arm is consumed.
    pub fn handle_command(&mut self, code: u8, now: f64) -> Result<Action, CommandError> {
        if let Some((mode, at)) = self.armed.take() {
            let fresh = now - at <= ARM_TIMEOUT_S;
            if fresh && self.phase == Phase::Characterization && code <= MAX_FREQ_KHZ as u8 {
                if code == 0 {
                    return Err(CommandError::InvalidDuration(code));
                }
                let duration_ms = code as u32 * 100;
                self.registry.slots[mode.slot()].duration_ms = Some(duration_ms);
                return Ok(Action::DurationSet { mode, duration_ms });
            }
        }

        match code {
            107..=202 | 207..=255 => return Err(CommandError::Reserved(code)),
            _ => {}
        }
        if code == CODE_ABORT {
            return match self.phase {
                Phase::Autonomous | Phase::Finished => {
                    self.phase = Phase::Characterization;
                    self.current_freq = None;
                    self.cycle_count = 0;
                    Ok(Action::Abort)
                }
                Phase::Characterization => Err(CommandError::WrongPhase { code, phase: self.phase }),
            };
        }
        if self.phase != Phase::Characterization {
            return Err(CommandError::WrongPhase { code, phase: self.phase });
        }
        match code {
            CODE_IDLE => {
                self.current_freq = None;
                Ok(Action::Stop)
            }
            1..=100 => {
                let f = code as u32;
                debug_assert!((MIN_FREQ_KHZ..=MAX_FREQ_KHZ).contains(&f));
                self.current_freq = Some(f);
                Ok(Action::Actuate { freq_khz: f })
            }
            CODE_AUTONOMOUS => {
                let missing = self.registry.missing();
                if !missing.is_empty() {
                    return Err(CommandError::IncompleteRegistry(missing));
                }
                self.phase = Phase::Autonomous;
                self.current_freq = None;
                self.cycle_count = 0;
                Ok(Action::StartAutonomy)
            }
            103..=106 => {
                let mode = ModeName::ALL[(code - 103) as usize];
                let f = self.current_freq.ok_or(CommandError::NoCurrentFrequency)?;
                self.registry.slots[mode.slot()].freq_khz = Some(f);
                Ok(Action::Registered { mode, freq_khz: f })
            }
            203..=206 => {
                let mode = ModeName::ALL[(code - 203) as usize];
                self.armed = Some((mode, now));
                Ok(Action::Armed { mode })
            }
            _ => unreachable!("reserved and abort codes handled above"),
        }
    }

    /// Load a complete registry, as if registered by commands.
    pub fn with_registry(mut self, registry: ModeRegistry) -> Self {
        self.registry = registry;
        self
    }

    /// Enter the autonomous phase directly (equivalent to accepting 101).
    pub fn start_autonomy(&mut self) -> Result<(), CommandError> {
        self.handle_command(CODE_AUTONOMOUS, 0.0).map(|_| ())
    }
}

/// [`ControllerState::handle_command`] plus the telemetry it implies: a
/// command acknowledgement, registry changes and phase changes.
pub fn apply_command(st: &mut ControllerState, log: &TelemetryLog, now: f64, code: u8) -> Result<Action, CommandError> {
    let before = st.phase;
    let result = st.handle_command(code, now);
    let detail = match &result {
        Ok(a) => serde_json::to_value(a)
            .ok()
            .and_then(|v| v.get("action").and_then(|s| s.as_str()).map(str::to_string))
            .unwrap_or_default(),
        Err(e) => e.to_string(),
    };
    log.append(
        now,
        Event::Command {
            code,
            accepted: result.is_ok(),
            detail,
        },
    );
    if let Ok(Action::Registered { mode, .. } | Action::DurationSet { mode, .. }) = result {
        let slot = st.registry.slot(mode);
        log.append(
            now,
            Event::Registry {
                mode,
                freq_khz: slot.freq_khz,
                duration_ms: slot.duration_ms,
            },
        );
    }
    if st.phase != before {
        log.append(now, Event::Phase { phase: st.phase });
    }
    result
}

/// The command sequence an operator sends to register `set`: for each mode
/// its frequency, the register code, the arm code and the duration argument.
pub fn registration_script(set: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::new();
    for mode in ModeName::ALL {
        let e = set.registry.get(mode).expect("parameter sets are complete");
        out.push(e.freq_khz as u8);
        out.push(mode.register_code());
        out.push(mode.arm_code());
        out.push((e.duration_ms / 100) as u8);
    }
    out.push(CODE_IDLE);
    out
}
