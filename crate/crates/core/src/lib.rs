//! Reference-free summarization scoring.
//!
//! The score of a summary against its parent text is the log of the token
//! compression ratio divided by the log of the embedding cosine similarity.
//! Higher is better: more meaning kept per unit of compression.
//!
//! ```
//! use noir_core::metric::{noir_score, CompressionRatio, MetricConfig, SimilarityScore};
//!
//! let cfg = MetricConfig::default();
//! let ratio = CompressionRatio::from_counts(50, 100).unwrap();
//! let sim = SimilarityScore::new(0.8587, &cfg).unwrap();
//! let m = noir_score(ratio, sim, &cfg);
//! assert!((m.value - 4.55).abs() < 0.01);
//! ```

pub mod corpus;
pub mod embedding;
pub mod metric;
pub mod parallel;
pub mod plot;
pub mod stats;
pub mod tokencount;

pub use corpus::{Document, EvalPair, PairAnchor, PairScore, ScoredPair, Scorer};
pub use embedding::{EmbedError, Embedder, EmbedderProfile, EmbeddingVector, HttpEmbedder, PrecomputedEmbedder};
pub use metric::{CompressionRatio, MetricConfig, NoirScore, SimilarityScore};
pub use parallel::Execution;
pub use tokencount::{TokenCounter, TokenCounterSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
