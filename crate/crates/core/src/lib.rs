//! Bidirectional-LSTM news classification toolkit.
//!
//! The crate covers the whole workflow: loading labeled articles
//! ([`corpus`]), cleaning them into tokens ([`textprep`]), building
//! vocabularies, embeddings and TF-IDF vectors ([`features`]), the Bi-LSTM
//! model with hand-written backpropagation ([`model`]), training
//! ([`training`]) and classification reports ([`metrics`]). All numeric work
//! runs on the small dense kernel in [`numerics`].

pub mod corpus;
pub mod features;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synthetic;
pub mod textprep;
pub mod training;

pub use corpus::{Corpus, Document, Label};
pub use features::{EmbeddingTable, EncodedSequence, Vocabulary};
pub use metrics::{ClassificationReport, ConfusionMatrix};
pub use model::{Hyper, ModelParams};
pub use numerics::{Matrix, Rng};
pub use textprep::{PrepConfig, TokenSequence};
pub use training::{History, TrainConfig};
