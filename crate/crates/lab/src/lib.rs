//! Everything around `plugin-core` that needs an operating system: dataset
//! files, checkpoints, CSV reports, the experiment pipelines and the
//! `plugin-lab` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod pipeline;
pub mod report;
pub mod run;

pub use error::{LabError, Result};
