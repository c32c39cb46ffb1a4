//! The polling surface.
//!
//! A validator polls every node in a domain with the same question,
//! repeatedly, and records whatever comes back: an answer (embedded
//! validator-side), a timeout, or an HTTP error. Simulated nodes make the
//! whole stream a deterministic function of the scenario seed; live nodes
//! speak the common JSON chat-completions protocol. Both produce the same
//! [`ResponseSample`] shape, so everything downstream is agnostic.

mod live;
mod poller;
mod sim;

pub use poller::Poller;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::EmbeddingVector;
use crate::provider::ProviderError;

/// Domains are capped; the aggregation protocol is not built to scale
/// past this.
pub const MAX_DOMAIN_NODES: usize = 1000;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("domain has {0} nodes, limit is {MAX_DOMAIN_NODES}")]
    TooManyNodes(usize),
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("node {node_id}: {message}")]
    InvalidNode { node_id: String, message: String },
    #[error("validator-side embedding failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("live node {0} has no endpoint")]
    MissingEndpoint(String),
    #[error("repeats must be at least 1")]
    ZeroRepeats,
    #[error("http client: {0}")]
    Client(String),
}

/// One question as posed to nodes. Detection keys on `id`; only live
/// polling ever sends `text` anywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// How a simulated node (mis)behaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeBehavior {
    /// Answers from the domain's default profile.
    #[default]
    Honest,
    /// Answers from an alternate profile (wrong model or knowledge base).
    Misconfigured { profile: String },
    /// Honest answers, stretched latency.
    Slow { latency_multiplier: f64 },
    /// Returns the given HTTP error with some probability.
    Flaky { code: u16, probability: f64 },
    /// Times out with some probability.
    Dead { timeout_probability: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    #[default]
    Simulated,
    Live,
}

fn default_base_latency() -> f64 {
    800.0
}

fn default_jitter() -> f64 {
    200.0
}

/// One node as the validator sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: String,
    #[serde(default)]
    pub kind: NodeKind,
    #[serde(default)]
    pub behavior: NodeBehavior,
    #[serde(default = "default_base_latency")]
    pub base_latency_ms: f64,
    #[serde(default = "default_jitter")]
    pub latency_jitter_ms: f64,
    /// Base URL for live nodes; ignored for simulated ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl NodeConfig {
    pub fn simulated(id: impl Into<String>, behavior: NodeBehavior) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Simulated,
            behavior,
            base_latency_ms: default_base_latency(),
            latency_jitter_ms: default_jitter(),
            endpoint: None,
        }
    }

    fn validate(&self) -> Result<(), NetworkError> {
        let fail = |message: String| {
            Err(NetworkError::InvalidNode {
                node_id: self.id.clone(),
                message,
            })
        };
        if self.base_latency_ms < 0.0 || self.latency_jitter_ms < 0.0 {
            return fail("negative latency".into());
        }
        match &self.behavior {
            NodeBehavior::Flaky { probability, .. } => {
                if !(0.0..=1.0).contains(probability) {
                    return fail(format!("probability {probability} outside [0, 1]"));
                }
            }
            NodeBehavior::Dead {
                timeout_probability,
            } => {
                if !(0.0..=1.0).contains(timeout_probability) {
                    return fail(format!("probability {timeout_probability} outside [0, 1]"));
                }
            }
            NodeBehavior::Slow { latency_multiplier } => {
                if *latency_multiplier < 0.0 || !latency_multiplier.is_finite() {
                    return fail(format!("latency multiplier {latency_multiplier} invalid"));
                }
            }
            NodeBehavior::Honest | NodeBehavior::Misconfigured { .. } => {}
        }
        if self.kind == NodeKind::Live && self.endpoint.is_none() {
            return Err(NetworkError::MissingEndpoint(self.id.clone()));
        }
        Ok(())
    }
}

/// A set of nodes that agreed to run one model and knowledge base.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: String,
    pub nodes: Vec<NodeConfig>,
    pub question_set_id: String,
    pub required_model_id: String,
    pub required_kb_id: String,
}

impl DomainSpec {
    pub fn new(
        domain_id: impl Into<String>,
        nodes: Vec<NodeConfig>,
        question_set_id: impl Into<String>,
        required_model_id: impl Into<String>,
        required_kb_id: impl Into<String>,
    ) -> Result<Self, NetworkError> {
        if nodes.len() > MAX_DOMAIN_NODES {
            return Err(NetworkError::TooManyNodes(nodes.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for node in &nodes {
            node.validate()?;
            if !seen.insert(node.id.as_str()) {
                return Err(NetworkError::DuplicateNode(node.id.clone()));
            }
        }
        Ok(Self {
            domain_id: domain_id.into(),
            nodes,
            question_set_id: question_set_id.into(),
            required_model_id: required_model_id.into(),
            required_kb_id: required_kb_id.into(),
        })
    }

    pub fn node(&self, id: &str) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

/// What a single poll produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    Timeout,
    HttpError,
}

/// One poll result. Serializes as a flat JSONL record with short keys:
/// `{"m","q","i","status","code","latency_ms","text","v"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    #[serde(rename = "m")]
    pub node_id: String,
    #[serde(rename = "q")]
    pub question_id: String,
    #[serde(rename = "i")]
    pub trial: u32,
    pub status: SampleStatus,
    /// HTTP status code; present iff `status` is `http_error`. Code 0
    /// means a transport or protocol failure with no HTTP response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<u16>,
    pub latency_ms: f64,
    /// Answer text; empty unless `status` is `ok`.
    pub text: String,
    /// Embedding of the answer; present iff `status` is `ok`.
    #[serde(rename = "v", default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

impl ResponseSample {
    pub fn is_ok(&self) -> bool {
        self.status == SampleStatus::Ok
    }

    pub(crate) fn failure(
        node_id: &str,
        question_id: &str,
        trial: u32,
        status: SampleStatus,
        code: Option<u16>,
        latency_ms: f64,
    ) -> Self {
        Self {
            node_id: node_id.to_string(),
            question_id: question_id.to_string(),
            trial,
            status,
            code,
            latency_ms,
            text: String::new(),
            embedding: None,
        }
    }
}
