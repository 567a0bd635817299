//! Camera-model identification pipeline: curation, augmentation, a small
//! densely connected CNN trained from scratch, test-time augmented inference and
//! the evaluation/ablation harness.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod infer;
pub mod io;
pub mod nn;
pub mod par;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
