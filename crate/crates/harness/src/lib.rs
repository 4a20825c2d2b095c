//! Training, evaluation, and data tooling around the crack segmentation
//! network: synthetic scene rendering, PNG dataset loading, Adam, binary
//! checkpoints, the training loop, per-image scoring, component ablations,
//! and a finite-difference verification entry point.

pub mod ablate;
pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod synth;
pub mod train;
pub mod verify;
