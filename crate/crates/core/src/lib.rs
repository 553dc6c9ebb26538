//! End-to-end aspect sentiment triplet extraction over a word-pair tag grid.
//!
//! The pipeline: token embeddings -> bidirectional LSTM -> GraphSAGE layers
//! over a per-sentence text graph (self-loop, neighbor, and dependency
//! edges) -> pairwise scoring with one max-pool inference pass -> six-way
//! cell classification. Triplets are decoded from the predicted grid and
//! scored with exact-match F1. Training uses exact tape-based gradients and
//! Adam with best-F1 early stopping.

pub mod config;
pub mod corpus;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod grid;
pub mod model;
pub mod pairscorer;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod textgraph;
pub mod train;
pub mod tri;

pub use config::TrainConfig;
pub use corpus::{
    dataset_stats, load_dataset, load_sentences, save_dataset, save_sentences, validate,
    AnnotatedSentence, DatasetSplit, DependencyArc, Sentence, Sentiment, Span, Stats, Triplet,
};
pub use error::{Error, Result};
pub use grid::{
    decode_grid, encode_grid, oracle_decode, triplet_metrics, EvalMetrics, GridTag, TagGrid,
};
pub use model::ModelParams;
pub use pairscorer::{inference_pass_count, predict_grid, PairTensors};
pub use synthetic::generate_synthetic;
pub use textgraph::{Aggregator, Mode};
pub use train::{evaluate, grad_check, train_loop, EmbeddingSource, TrainHistory};
