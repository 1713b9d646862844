//! News-driven stock movement prediction: sample extraction, keyword and
//! category lexicons learned from word embeddings, a feed-forward classifier,
//! and correlation-graph propagation to stocks that have no news.

pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod lexicon;
pub mod mlp;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
