//! Token-level probability reweighting for frozen autoregressive language
//! models.
//!
//! A frozen base model `b` and a small trainable reweighting model `r` each
//! produce a next-token distribution. The plugin distribution is their
//! normalized elementwise product. This crate holds everything that is pure
//! computation:
//!
//! - [`corpus`]: vocabularies, tokenization and deterministic splits.
//! - [`autodiff`]: a small reverse-mode tape over dense `f64` tensors.
//! - [`models`]: n-gram and tiny causal transformer language models, plus the
//!   frozen [`models::BlackBox`] wrapper.
//! - [`plugin`]: the combine rule, the sequence loss, training with early
//!   stopping, and the baselines.
//! - [`decoding`]: greedy, temperature and nucleus decoding.
//! - [`noise`]: transition matrices, forward correction, the naive transition
//!   estimator and the sequential-estimation decay experiment.
//! - [`metrics`]: BLEU, ROUGE, NIST and CIDEr.
//! - [`synth`]: seeded synthetic worlds with known ground-truth distributions.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! anything touching the filesystem live in the `plugin-lab` crate.
#![no_std]
#![deny(rust_2018_idioms)]
#![warn(missing_debug_implementations)]
// `Float` is only needed when std is absent from the build graph.
#![allow(unused_imports)]

extern crate alloc;

pub mod autodiff;
pub mod corpus;
pub mod decoding;
pub mod metrics;
pub mod models;
pub mod noise;
pub mod plugin;
pub mod prob;
pub mod rng;
pub mod synth;

pub use prob::{ProbVector, TokenId, PROB_FLOOR};
