//! Core engine for agile concept modeling.
//!
//! A user describes a visual concept with a handful of text phrases. The
//! engine retrieves nearest neighbors of those phrases from a frozen
//! image-text embedding corpus, collects ratings, trains a small MLP head on
//! the frozen embeddings, and then runs rounds of margin-based active
//! learning over the whole corpus. The same loop can be driven by a human
//! rater (through `agile-gateway`) or by a simulated oracle.
//!
//! Module map:
//!
//! - [`embed_store`]: corpus ingest, validation, normalization, splits.
//! - [`ann_index`]: exact and partitioned (inverted-file) cosine top-k.
//! - [`concept_head`]: zero-shot scoring, training pools, MLP training.
//! - [`active_learner`]: sharded corpus scoring and batch selection.
//! - [`eval_kit`]: SipHash-keyed stratified eval sets and metrics.
//! - [`session`]: the rating/training/selection state machine.
//! - [`synthetic`]: planted-concept corpora and a stand-in text embedder.

pub mod active_learner;
pub mod ann_index;
pub mod concept_head;
pub mod embed_store;
mod error;
pub mod eval_kit;
pub mod rng;
pub mod session;
pub mod synthetic;

pub use error::{Error, Result};
