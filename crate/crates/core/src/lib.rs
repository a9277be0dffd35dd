//! Rule-guided untargeted poisoning of knowledge graph embeddings.
//!
//! The crate mines chain Horn rules from a training graph, plans triple
//! deletions (rule influence) and additions (corrupted low-confidence rules),
//! retrains fact-based embedding models on the perturbed graph and measures
//! the link-prediction degradation.

pub mod error;
pub mod kg;
pub mod rules;

pub use error::{Error, Result};
pub mod attack;
pub mod baselines;
pub mod kge;
pub mod harness;

pub type EmbeddingModelF32 = kge::EmbeddingModel<f32>;
pub type EmbeddingModelF64 = kge::EmbeddingModel<f64>;
