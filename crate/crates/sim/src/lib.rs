//! Grid-based simulation, configuration and the command-line harness for
//! the resting-trap tunneling model.

pub mod gpe;
pub mod grid;
pub mod config;
pub mod harness;
