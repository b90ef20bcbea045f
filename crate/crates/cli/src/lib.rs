//! The `favbot` command-line tool: batch experiments and the live server.

pub mod commands;
pub mod gateway;
pub mod output;
pub mod svg;

pub use commands::{run, Cli, Status};
