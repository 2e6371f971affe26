//! Experiment runner library behind the `fair` command-line tool: dataset
//! and model file IO, result tables, and the simulation/sweep/real-data/
//! timing experiment drivers.

pub mod clock;
pub mod experiments;
pub mod io;
pub mod report;
