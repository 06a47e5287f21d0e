//! A retrieval-oriented vector quantization library.
//!
//! Documents (dense float embeddings) are compressed into a coarse inverted
//! file plus product-quantization codes. Instead of fitting the quantizer to
//! reconstruction error alone, the centroids, codebooks, and a lightweight
//! affine query transform are *trained*: a distillation loop pushes the
//! inner products computed from compressed documents toward the exact inner
//! products of the original embeddings, using score- or ranking-based
//! losses over sampled candidate documents.
//!
//! The pieces:
//!
//! - [`embed`]: embedding containers, similarity primitives, and bit-exact
//!   file formats (`.fvecs` / `.ivecs` / TSV judgments).
//! - [`kmeans`]: seeded, thread-count-independent k-means with k-means++
//!   initialization.
//! - [`index`]: quantizer construction, document encoding, reconstruction,
//!   and the index file format.
//! - [`transform`]: the affine query-side map applied before search.
//! - [`loss`] / [`sampling`] / [`optim`] / [`trainer`]: the distillation
//!   stack — five teacher-student losses with analytic gradients, candidate
//!   sampling strategies, AdamW, and the epoch loop with checkpointing.
//! - [`search`]: table-driven approximate search with list probing, plus the
//!   exact brute-force oracle.
//! - [`metrics`]: Recall@K and MRR@K.
//! - [`synth`]: synthetic cluster corpora with known ground truth.
//!
//! Every stochastic step derives from explicit `u64` seeds; identical
//! inputs, seeds, and configuration produce bit-identical artifacts
//! regardless of thread count.

pub mod embed;
pub mod error;
pub mod index;
pub mod kmeans;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod sampling;
pub mod search;
pub mod synth;
pub mod trainer;
pub mod transform;
pub mod vecmath;

mod seeds;
mod topk;

pub use embed::{EmbeddingSet, RelevanceJudgments};
pub use error::{Error, Result};
pub use index::{DocumentCode, IndexArtifact, IndexParams, IvfCentroids, PqCodebooks};
pub use loss::DistillLoss;
pub use sampling::{CandidateSet, SamplingStrategy, TopkCache, TopkTake};
pub use search::{RankedResult, SearchHit, SearchParams};
pub use trainer::{DistillConfig, TrainLog, TrainOutcome, Trainer};
pub use transform::QueryTransform;
