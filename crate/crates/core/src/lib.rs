//! Box-supervised segmentation boosting.
//!
//! Turns coarse bounding-box annotations plus a baseline model's predictions
//! into filtered tri-valued pseudo labels (fusion filter sampling), then
//! trains a pair of architecturally distinct segmentation networks with
//! masked BCE/Dice losses and an image-consistency loss over the pixels the
//! pseudo labels leave uncertain.
//!
//! Module map:
//!
//! - [`mask`] — mask data types, box rasterization, set algebra, Dice/IoU
//! - [`ffs`] — fusion filter sampling: object-level filter + pixel-level fusion
//! - [`loss`] — BCE / Dice / image-consistency losses with analytic gradients
//! - [`net`] — two toy segmentation networks with manual backprop and AdamW
//! - [`data`] — synthetic corpus generation with annotation-noise injection
//! - [`eval`] — Dice/IoU aggregation, weighted averages, threshold curves
//! - [`pipeline`] — stage orchestration: pretrain, predict, ffs, boost, eval
//! - [`io`] — PGM images, JSON-lines manifests, binary checkpoints

pub mod data;
pub mod error;
pub mod eval;
pub mod ffs;
pub mod io;
pub mod loss;
pub mod mask;
pub mod net;
pub mod pipeline;

pub use error::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
