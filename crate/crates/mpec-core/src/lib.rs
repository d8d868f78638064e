//! Masked point-entity contrastive training on synthetic indoor scenes.
//!
//! The crate provides a desk-scale training stack: a reverse-mode autodiff
//! core, a deterministic synthetic scene generator, a frozen text-embedding
//! stub, a dual-view augmentation and grid-masking pipeline, a small point
//! encoder with a vision-language adapter, the contrastive losses, an AdamW
//! trainer with a warmup+cosine schedule, and an open-vocabulary evaluation
//! harness.
//!
//! Data-parallel inner loops (scene generation, per-scene batch losses,
//! evaluation) run on rayon when the `parallel` feature is enabled and the
//! caller asks for it; results are reduced in a fixed order either way, so
//! parallel and sequential execution produce identical bytes.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod text;
pub mod train;

pub use error::{Error, Result};
