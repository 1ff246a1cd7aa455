//! Long-tailed classification toolkit for camera-trap detection pipelines.
//!
//! The crate covers the full desk-scale workflow: detector-output ingestion
//! and metadata merging, class-capped balancing, deterministic stratified
//! splits, head/tail/few-shot partitioning, training of a small classifier
//! under cross-entropy, weighted cross-entropy, focal, or LDAM losses with
//! Adam/AdamW, plateau scheduling and early stopping, and per-class and
//! grouped evaluation with prediction-collapse reports.

pub mod bench;
pub mod check;
pub mod data;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
