//! Simulation and control stack for a frequency-steered vibration robot.
//!
//! A single piezo actuator drives the robot; the drive frequency selects a
//! resonance mode and with it a body-frame velocity. [`resonance`] holds the
//! calibrated mode table, [`kinematics`] integrates and analyses
//! trajectories, [`world`] simulates the arena and camera, [`vision`] trains
//! and runs the zone classifier, [`controller`] implements the operator
//! command set and the autonomous loop, and [`protocol`] carries commands and
//! telemetry over byte streams.

pub mod controller;
pub mod experiments;
pub mod kinematics;
pub mod protocol;
pub mod resonance;
pub mod rng;
pub mod telemetry;
pub mod vision;
pub mod world;
