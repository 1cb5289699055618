//! Similarity-only cross-modal re-ranking.
//!
//! Given image-text similarity scores and intra-modal similarities, this crate
//! refines the top of each query's ranking. Every query and its top-K
//! neighbors are encoded by their similarities to a shared set of
//! "pillar" entities; a small graph network then propagates features over
//! the neighborhood and the refined cosine scores reorder the window.
//!
//! The crate is `no_std` with `alloc`. File formats, parallel execution and
//! the command-line front end live in the companion `pillar-rerank` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod data;
mod error;
pub mod exec;
pub mod graph;
pub mod index;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod pillar;
pub mod synthetic;
pub mod train;

pub use config::ModelConfig;
pub use data::{
    cosine_similarity_matrix, rank_row, DatasetBundle, Direction, EmbeddingSet, EntityId,
    GroundTruth, Modality, RankingList, SimilarityStore, Split, Splits,
};
pub use error::{Error, Result};
pub use graph::{rerank_query, Neighborhood, Reranked};
pub use index::RankIndex;
pub use matrix::Matrix;
pub use metrics::EvalReport;
pub use params::{Model, ReRankerParams};
pub use pillar::{PillarSet, PillarStrategy};
