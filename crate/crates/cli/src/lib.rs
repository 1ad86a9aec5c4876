//! Experiment driver: configuration, dataset generation, training, rollouts,
//! ablations, timing tables and plot rendering.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod render;

pub use config::{Corrections, ExperimentConfig};
pub use experiments::{breakthrough, Breakthrough, Lab};
