//! Dataset files, checkpoints, run configs and the workflow behind the
//! `gait` command.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod pipeline;

pub use error::{Error, Result};
