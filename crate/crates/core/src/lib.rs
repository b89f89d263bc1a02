//! Sparse n-gram Deep Averaging Network students for fast text
//! classification.
//!
//! The pipeline: build an n-gram vocabulary ([`vocab`]), featurize text into
//! id lists ([`featurize`]), distill a teacher's soft labels into a
//! [`model::DanModel`] and optionally fine-tune it on gold labels
//! ([`optim`]), shrink it by dropping rare n-grams ([`prune`]), and measure
//! it ([`analysis`]). [`pipeline`] strings the stages together.

pub mod analysis;
mod codec;
pub mod dataset;
pub mod error;
pub mod featurize;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod prune;
pub mod synth;
pub mod text;
pub mod vocab;

pub use error::{Error, Result};
pub use featurize::{Example, FeaturizedExample, Featurizer, PairExample};
pub use model::{DanModel, Input, ModelConfig, Pooling};
pub use vocab::{FrequencySource, NgramVocab, TieBreak, VocabConfig};
