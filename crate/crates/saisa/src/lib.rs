//! Command-line front end: preset files, checkpoints, reports and the `saisa` binary.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod presets;
pub mod report;
