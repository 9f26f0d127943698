//! Cross-graph pairwise community detection.
//!
//! Given a dense "main" bipartite user-object graph and a sparse one sharing a
//! set of mutual users, this crate detects raw communities by minimizing a
//! two-level map-equation codelength, trains a neural model that predicts
//! pairwise community closeness for user triplets (is `j` closer, similar, or
//! farther than `k` with respect to `i`?), and evaluates the result with
//! classification and retrieval metrics on planted synthetic data.
//!
//! Module map:
//! - [`graph`]: bipartite graphs, cross-graph datasets, sparsification, multi-hot views
//! - [`mapeq`]: map-equation codelength and greedy community detection
//! - [`model`]: the closeness model (forward, analytic backward, memory gate)
//! - [`train`]: synthetic data, triplet sampling, Adam, the training loop
//! - [`eval`]: metrics, baselines, sparsity sweeps, user-type and ablation harnesses

pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod mapeq;
pub mod model;
pub mod train;

pub use error::{Error, Result};
