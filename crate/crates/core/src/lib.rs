//! Speaker-aware DAG networks for emotion recognition in conversation, trained
//! with a curriculum ordered by emotional-shift difficulty.

pub mod checkpoint;
pub mod cli;
pub mod config_file;
pub mod curriculum;
pub mod dag;
pub mod data;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
