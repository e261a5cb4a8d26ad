//! Zero-shot label propagation over precomputed vision-language embeddings.
//!
//! Given unit-norm image embeddings, unit-norm class embeddings (encoded
//! text prompts or class proxies) and no labels at all, this crate:
//!
//! 1. builds a bimodal kNN graph whose nodes are the classes followed by the
//!    images ([`graph`]), with per-modality neighbor searches ([`knn`]) so
//!    the systematically lower image-to-class similarities still produce
//!    cross-modal edges;
//! 2. spreads class mass over the graph by solving
//!    `(I - alpha * S_hat) y_c = e_c`, one sparse positive-definite system
//!    per class ([`solver`]);
//! 3. classifies in-graph images from those solutions (transductive), or
//!    held-out queries either by one extra solve against a sparse indicator
//!    vector or by a cheap product with the precomputed, optionally
//!    sparsified score matrix ([`inference`]).
//!
//! [`embeddings`] holds the matrix/label types and file formats, and
//! [`harness`] provides a synthetic bimodal generator plus evaluation
//! helpers so the whole pipeline can be exercised without real encoders.
//!
//! Everything is generic over the storage scalar through [`Scalar`]
//! (`f32` for all file formats, `f64` available for reference math), and
//! deterministic: fixed accumulation orders, index-based tie-breaking, and
//! parallelism that never changes results with the thread count.

pub mod embeddings;
pub mod graph;
pub mod harness;
pub mod inference;
pub mod knn;
pub mod scalar;
pub mod solver;

mod error;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Feature matrix in the storage precision used by the file formats.
pub type Features = embeddings::FeatureMatrix<f32>;
/// Adjacency in storage precision.
pub type Graph = graph::SparseAdjacency<f32>;
/// Score matrix in storage precision.
pub type Scores = inference::PropagatedScores<f32>;
/// Indicator vector in storage precision.
pub type Indicator = inference::IndicatorVector<f32>;
