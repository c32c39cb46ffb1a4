//! Simulated node responses.
//!
//! Every draw comes from an RNG stream derived from (domain seed,
//! node, question, trial): first the fault draw, then the latency draw.
//! Both draws always happen, in that order, so a node's latency is the
//! same whether or not its fault fired, and polling order or concurrency
//! cannot shift the streams.

use rand::Rng;

use crate::provider::{EmbedContext, EmbeddingProvider};
use crate::rng::{derive_rng, derive_seed};

use super::{NetworkError, NodeBehavior, NodeConfig, ResponseSample, SampleStatus};

pub(super) fn poll_simulated(
    provider: &dyn EmbeddingProvider,
    seed: u64,
    node: &NodeConfig,
    question_id: &str,
    trial: u32,
    timeout_ms: u64,
) -> Result<ResponseSample, NetworkError> {
    let trial_label = trial.to_string();
    let mut rng = derive_rng(seed, &["poll", &node.id, question_id, &trial_label]);
    let fault_u: f64 = rng.gen();
    let latency_u: f64 = rng.gen();

    let timeout = timeout_ms as f64;
    let multiplier = match &node.behavior {
        NodeBehavior::Slow { latency_multiplier } => *latency_multiplier,
        _ => 1.0,
    };
    let latency = (node.base_latency_ms + node.latency_jitter_ms * latency_u) * multiplier;

    match &node.behavior {
        NodeBehavior::Dead {
            timeout_probability,
        } if fault_u < *timeout_probability => {
            return Ok(ResponseSample::failure(
                &node.id,
                question_id,
                trial,
                SampleStatus::Timeout,
                None,
                timeout,
            ));
        }
        NodeBehavior::Flaky { code, probability } if fault_u < *probability => {
            return Ok(ResponseSample::failure(
                &node.id,
                question_id,
                trial,
                SampleStatus::HttpError,
                Some(*code),
                latency.min(timeout),
            ));
        }
        _ => {}
    }

    if latency > timeout {
        return Ok(ResponseSample::failure(
            &node.id,
            question_id,
            trial,
            SampleStatus::Timeout,
            None,
            timeout,
        ));
    }

    // Placeholder answer text; detection only ever looks at embeddings.
    let digest = derive_seed(seed, &["text", &node.id, question_id, &trial_label]);
    let text = format!("answer:{}", hex::encode(&digest[..8]));
    let embedding = provider.embed(
        &text,
        &EmbedContext {
            question_id,
            node_id: &node.id,
            trial,
        },
    )?;

    Ok(ResponseSample {
        node_id: node.id.clone(),
        question_id: question_id.to_string(),
        trial,
        status: SampleStatus::Ok,
        code: None,
        latency_ms: latency,
        text,
        embedding: Some(embedding),
    })
}
