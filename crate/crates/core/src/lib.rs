//! Efficient video segmentation by keyframe segmentation and optical-flow
//! label propagation, with forward-backward consistency masks steering an
//! optional refiner.
//!
//! The building blocks are usable on their own:
//!
//! - [`disflow`]: dense inverse search optical flow.
//! - [`propagation`]: flow to mapping conversion and tiled remapping.
//! - [`iam`]: inconsistency masks and blending.
//! - [`segmentation`]: segmenter and refiner backends.
//! - [`pipeline`]: keyframe scheduling over a frame stream.
//! - [`evaluation`]: mIoU, inconsistency statistics and timing probes.
//! - [`synthgen`]: synthetic sequences with exact ground truth.

pub mod cli;
pub mod disflow;
pub mod error;
pub mod evaluation;
pub mod iam;
pub mod imagery;
pub mod pipeline;
pub mod propagation;
pub mod segmentation;
pub mod synthgen;

pub use error::{Error, Result};
