//! Experiment drivers.

pub mod config;
pub mod coverage;
pub mod diagnose;
pub mod fit;
pub mod simulate;
