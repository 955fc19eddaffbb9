//! Knowledge-grounded dialogue generation with a hierarchical
//! pointer-generator and a ladder of strong baselines.
//!
//! The crate contains everything needed to reproduce the model family end to
//! end on a single machine:
//!
//! * [`autodiff`] — a small reverse-mode automatic differentiation engine on
//!   a flat tape, `f64` throughout.
//! * [`corpus`] — persona-dialogue corpus parsing, tokenization, vocabulary
//!   construction, per-example extended vocabularies, and tf-idf fact
//!   selection.
//! * [`seqnn`] — LSTM encoder/decoder cells and additive attention.
//! * [`model`] — the twelve model variants wired over one shared decode-step
//!   graph, used both for teacher-forced training and for decoding.
//! * [`training`] — mini-batch Adam with gradient clipping, deterministic
//!   given a seed, with validation-perplexity checkpoint selection.
//! * [`eval`] — length-normalized beam search and corpus metrics (BLEU,
//!   ROUGE-L, CIDEr, distinct-n, perplexity).
//!
//! The `deepcopy` binary exposes `prepare`, `train`, `evaluate`, `generate`
//! and `inspect` subcommands over these pieces.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod corpus;
pub mod deepcopy;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod seqnn;
pub mod training;

pub use error::{Error, Result};
