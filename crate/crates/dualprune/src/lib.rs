//! Dynamic dataset pruning with dual supervision.
//!
//! Instead of training on the full dataset every epoch, a run re-selects a
//! subset each epoch by optimizing one learnable score per sample under two
//! signals: the sample's task loss (difficulty) and the temperature-scaled
//! cosine similarity between its image embedding and its observed label's
//! text embedding (semantic consistency). Samples whose scores sit nearest
//! the median are kept; samples that are hard *and* semantically
//! inconsistent — the usual signature of a bad label — drift out of that
//! band and stop consuming training steps.
//!
//! The crate ships a self-contained desk-scale stack: a synthetic blob
//! generator with label-noise injection, embedding-table ingestion and
//! synthesis, linear adapter fine-tuning under an InfoNCE objective, a small
//! differentiable classifier with hand-derived gradients, the pruning epoch
//! loop with honest cost accounting, and a CLI that streams per-epoch
//! metrics as JSONL. Every operation is a deterministic function of its
//! explicit seed.

pub mod binio;
pub mod cli;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod scorer;
pub mod trainer;
pub mod xmodal;

pub use dataset::{Dataset, Sample};
pub use embeddings::EmbeddingTable;
pub use error::{Error, Result};
pub use harness::{
    run_experiment, EpochMetrics, RunReport, RunSummary, Strategy, TrainConfig,
};
pub use scorer::{ScoreState, SelectionResult};
pub use trainer::ClassifierModel;
pub use xmodal::AdapterPair;
