//! Generate natural-language question titles from source-code snippets.
//!
//! The crate is organised as a pipeline:
//!
//! - [`corpus`]: ingest post records, mine `<code, title>` pairs, tokenize, filter and split.
//! - [`vocab`]: frequency-thresholded vocabulary plus per-example extended vocabularies.
//! - [`numerics`]: a small reverse-mode differentiation tape over dense tensors.
//! - [`model`]: two-layer bidirectional LSTM encoder, LSTM decoder with attention,
//!   copy gate and coverage, and the training loss.
//! - [`train`]: SGD training loop and binary checkpoints.
//! - [`decode`]: beam search and greedy decoding.
//! - [`metrics`]: corpus BLEU and ROUGE-1/2/L.
//! - [`retrieval`]: TF-IDF nearest-neighbour baseline, embedding similarity,
//!   clone removal and top-k similar-question lookup.
//! - [`cli`]: the `code2title` command-line driver.
//!
//! See the `examples/` directory of this crate for one runnable program per capability.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod decode;
mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod retrieval;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
