//! Statistical verification of decentralized LLM inference nodes.
//!
//! Nodes in an inference network answer the same question repeatedly;
//! their answers, embedded as vectors, form clusters. Honest nodes
//! running the same model produce overlapping clusters, while a node on
//! the wrong model or knowledge base drifts measurably away. This crate
//! implements the whole pipeline around that observation:
//!
//! - [`metrics`]: cluster summaries and the distinguishability predicate.
//! - [`provider`]: pluggable embedding sources (synthetic, file, remote).
//! - [`network`]: node simulation and polling with fault injection.
//! - [`detector`]: outlier, latency, and error-status flagging.
//! - [`epoch`]: the validator protocol, bulletin board, and staking.
//! - [`ranker`]: ordering questions by discriminative power.
//! - [`scenario`]: TOML scenario configuration shared by the CLI.

pub mod detector;
pub mod epoch;
pub mod metrics;
pub mod network;
pub mod provider;
pub mod ranker;
pub mod rng;
pub mod scenario;

#[cfg(test)]
pub(crate) mod testutil;

pub use metrics::{
    cluster_distance, separation, summarize, AnswerCluster, EmbeddingVector, MetricsError,
    SampleSet, SeparationResult, DEFAULT_SEPARATION_K,
};
