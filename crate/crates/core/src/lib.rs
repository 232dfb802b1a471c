//! Distance-aware hierarchical retrieval for cross-view geo-localization.
//!
//! The crate is organised along the retrieval pipeline:
//!
//! - [`geo`]: buildings, pairwise distances, anchor-specific scale partitions
//! - [`embedding`]: per-image embeddings, persistence, similarity matrices
//! - [`losses`]: multi-scale contrastive, proxy clustering and triplet losses
//! - [`synth`] / [`train`]: synthetic campuses and a shared linear encoder
//! - [`metrics`]: per-scale R@K / mAP and hierarchical H-AP, ASI, NDCG
//! - [`rerank`]: k-reciprocal and segmented multi-scale re-ranking
//! - [`pipeline`]: test-split retrieval tasks in both view directions
//! - [`gradcheck`]: finite-difference checks of the analytic loss gradients
//! - [`config`]: the pipeline configuration file

pub mod config;
pub mod embedding;
pub mod error;
pub mod geo;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod rerank;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
