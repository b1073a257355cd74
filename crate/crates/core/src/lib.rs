//! Zero-shot video captioning trained on text alone.
//!
//! A decoder learns to reconstruct captions from their sentence embeddings
//! plus a *semantic group* of related sentences retrieved from a sentence
//! bank. At inference time, frame embeddings are projected into the text
//! embedding space through a temperature softmax over the bank, fused, and
//! decoded with beam search.
//!
//! Module map:
//!
//! * [`bank`]: sentence bank, corpus statistics, `SGCB` file format
//! * [`similarity`]: cosine / Jaccard / hybrid scoring and Top-K selection
//! * [`noise`]: Gaussian perturbation of semantic-group members
//! * [`supervision`]: candidate distribution and probability-sampled loss
//! * [`model`]: fusion module and causal transformer decoder with manual backprop
//! * [`training`]: epoch loop and AdamW
//! * [`inference`]: frame pooling, domain transfer, beam search, `SGCF` file format
//! * [`metrics`]: BLEU, ROUGE-L, CIDEr-D
//! * [`synth`]: seeded synthetic corpora for end-to-end checks
//!
//! Data-parallel loops (batch gradients, batch retrieval) run on rayon when the
//! `parallel` feature is enabled (the default) and fall back to plain iterators
//! otherwise. Results are identical either way.

// NaN-rejecting `!(x > 0.0)` checks and wide backprop signatures are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bank;
mod binio;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod par;
pub mod seed;
pub mod similarity;
pub mod supervision;
pub mod synth;
pub mod text;
pub mod training;

pub use error::{Error, Result};
