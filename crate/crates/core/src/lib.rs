//! Desk-scale self-supervised valence/arousal regression from video.

pub mod augment;
pub mod cli;
pub mod datagen;
pub mod diffcore;
pub mod error;
pub mod kv;
pub mod labels;
pub mod losses;
pub mod model;
pub mod pretext;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
