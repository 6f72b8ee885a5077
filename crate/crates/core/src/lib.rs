//! Desk-scale engine for learning authorial style representations that are
//! disentangled from content.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It contains:
//!
//! - [`autodiff`]: a small reverse-mode automatic differentiation engine over
//!   dense `f64` tensors.
//! - [`data`]: synthetic corpora with known style and topic factors, a
//!   word-level tokenizer, Okapi BM25, k-means and pair mining.
//! - [`contrastive`]: a bidirectional sequence encoder pretrained with a
//!   supervised contrastive loss over BM25 hard negatives.
//! - [`vae`]: dual style/content Gaussian encoders and the VAE objective.
//! - [`generator`]: the hybrid-prompt decoder used for reconstruction and for
//!   explainable pair discrimination, plus decision parsing.
//! - [`finetune`]: joint training of encoders and generator.
//! - [`eval`]: ranked-retrieval metrics, standardized partial AUC and
//!   few-shot detection scoring.
//!
//! File formats, checkpoints and the command line live in the `stylelab`
//! crate.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod finetune;
pub mod generator;
pub mod math;
pub mod nn;
pub mod vae;

pub use error::{Error, Result};
