//! Data, reward and optimisation primitives for surgical visual question
//! answering with localization, trained by supervised fine-tuning followed by
//! group-relative policy optimisation.

pub mod dataset;
pub mod env;
pub mod forge;
pub mod geometry;
pub mod grpo;
pub mod metrics;
pub mod reward;
pub mod rng;
pub mod trace;

pub use geometry::{BoundingBox, ImageDims, Quadrant};
