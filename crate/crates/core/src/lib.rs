//! Parasitic-egg detection pipeline: seeded degradation, GAN enhancement,
//! an anchor-grid detector with NMS, and the cross-validated evaluation
//! matrix over train/test image domains.

pub mod checkpoint;
pub mod dataset;
pub mod degrade;
pub mod detect;
pub mod domain;
pub mod enhance;
pub mod experiments;
pub mod error;
pub mod nn;
pub mod postprocess;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
