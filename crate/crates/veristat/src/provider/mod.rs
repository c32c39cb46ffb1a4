//! Embedding sources.
//!
//! The rest of the pipeline only sees [`EmbeddingProvider`]; behind it sit
//! a deterministic synthetic generator for calibrated simulations, a
//! file-backed store of precomputed vectors for dataset replay, and a
//! client for a remote embedding service.

mod remote;
mod store;
mod synthetic;

pub use remote::{RemoteProvider, SecretToken};
pub use store::{EmbeddingStore, StoreRecord};
pub use synthetic::{triangle_points, BehaviorProfile, SyntheticProvider};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{EmbeddingVector, MetricsError};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no stored embedding for question {question_id} node {node_id} trial {trial}")]
    MissingKey {
        question_id: String,
        node_id: String,
        trial: u32,
    },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("store parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding service returned status {status}")]
    Status { status: u16 },
    #[error("embedding service transport: {0}")]
    Transport(String),
    #[error("embedding service response malformed: {0}")]
    MalformedResponse(String),
    #[error("invalid embedding: {0}")]
    Invalid(#[from] MetricsError),
    #[error("unknown behavior profile {0}")]
    UnknownProfile(String),
}

/// Identifies whose answer to which question is being embedded. The
/// synthetic provider keys its deterministic noise streams on this, so
/// embedding the same context twice always yields the same vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedContext<'a> {
    pub question_id: &'a str,
    pub node_id: &'a str,
    pub trial: u32,
}

/// A source of embedding vectors. Implementations are immutable after
/// construction and callable from any thread.
pub trait EmbeddingProvider: Send + Sync {
    /// Dimension of every vector this provider emits.
    fn dimension(&self) -> usize;

    /// Embeds one answer. Synthetic and file providers key on `ctx`
    /// (their vectors are precomputed or generated per context); the
    /// remote provider embeds `text`.
    fn embed(&self, text: &str, ctx: &EmbedContext<'_>) -> Result<EmbeddingVector, ProviderError>;
}

/// Declarative provider selection, as it appears in scenario files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    /// Deterministic Gaussian clusters around configured profile centers.
    Synthetic {
        dimension: usize,
        /// Defaults to the scenario seed when omitted.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Precomputed vectors loaded from a JSONL store.
    File { path: PathBuf },
    /// Remote embedding service speaking the common JSON embeddings API.
    Remote {
        endpoint: String,
        model: String,
        dimension: usize,
        /// Name of the environment variable holding the bearer token.
        /// The token itself never appears in config files or logs.
        auth_token_env: Option<String>,
        max_in_flight: Option<usize>,
    },
}
